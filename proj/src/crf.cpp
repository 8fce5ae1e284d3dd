#include "crashloc/crf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace crashloc {

namespace {

double lse2(double x, double y) {
  const double m = std::max(x, y);
  return m + std::log(std::exp(x - m) + std::exp(y - m));
}

void check_shapes(const RowMatrix& p) {
  if (p.rows() == 0) throw std::invalid_argument("crf: empty emission matrix");
  if (p.cols() != 2) throw std::invalid_argument("crf: emission matrix must have 2 columns");
}

struct Lattice {
  RowMatrix alpha;  // forward log scores including emissions
  RowMatrix beta;   // backward log scores excluding the position's emission
  double log_z = 0.0;
};

Lattice forward_backward(const RowMatrix& p, const CrfParams& a) {
  check_shapes(p);
  const Eigen::Index T = p.rows();
  Lattice l;
  l.alpha.resize(T, 2);
  l.beta.resize(T, 2);
  for (int j = 0; j < 2; ++j) l.alpha(0, j) = a(kBOS, j) + p(0, j);
  for (Eigen::Index t = 1; t < T; ++t)
    for (int j = 0; j < 2; ++j)
      l.alpha(t, j) = lse2(l.alpha(t - 1, 0) + a(0, j), l.alpha(t - 1, 1) + a(1, j)) + p(t, j);
  for (int j = 0; j < 2; ++j) l.beta(T - 1, j) = a(j, kEOS);
  for (Eigen::Index t = T - 2; t >= 0; --t)
    for (int i = 0; i < 2; ++i)
      l.beta(t, i) = lse2(a(i, 0) + p(t + 1, 0) + l.beta(t + 1, 0), a(i, 1) + p(t + 1, 1) + l.beta(t + 1, 1));
  l.log_z = lse2(l.alpha(T - 1, 0) + a(0, kEOS), l.alpha(T - 1, 1) + a(1, kEOS));
  return l;
}

// Suffix DP over a small state machine followed by a greedy forward pass. Each
// state carries a tag; candidates are tried in list order and only a strict
// improvement replaces the current pick, so list order decides ties.
struct Machine {
  int states;
  std::vector<int> tag;
  std::vector<bool> can_start;
  std::vector<bool> can_end;
  std::vector<std::vector<int>> next;  // successor states, preferred first
};

Decoded run_machine(const RowMatrix& p, const CrfParams& a, const Machine& m) {
  check_shapes(p);
  const Eigen::Index T = p.rows();
  RowMatrix v(T, m.states);
  for (int s = 0; s < m.states; ++s)
    v(T - 1, s) = m.can_end[s] ? p(T - 1, m.tag[s]) + a(m.tag[s], kEOS) : kNegInf * 4;
  for (Eigen::Index t = T - 2; t >= 0; --t)
    for (int s = 0; s < m.states; ++s) {
      double best = kNegInf * 4;
      for (int n : m.next[s]) best = std::max(best, a(m.tag[s], m.tag[n]) + v(t + 1, n));
      v(t, s) = p(t, m.tag[s]) + best;
    }
  Decoded d;
  d.labels.resize(static_cast<std::size_t>(T));
  int cur = -1;
  double best = 0.0;
  for (int s = 0; s < m.states; ++s) {
    if (!m.can_start[s]) continue;
    const double c = a(kBOS, m.tag[s]) + v(0, s);
    if (cur < 0 || c > best) {
      cur = s;
      best = c;
    }
  }
  d.score = best;
  d.labels[0] = m.tag[cur];
  for (Eigen::Index t = 1; t < T; ++t) {
    int pick = -1;
    double pb = 0.0;
    for (int n : m.next[cur]) {
      const double c = a(m.tag[cur], m.tag[n]) + v(t, n);
      if (pick < 0 || c > pb) {
        pick = n;
        pb = c;
      }
    }
    cur = pick;
    d.labels[static_cast<std::size_t>(t)] = m.tag[cur];
  }
  return d;
}

}  // namespace

CrfParams::CrfParams() { enforce_fixed(); }

void CrfParams::enforce_fixed() {
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (is_fixed(i, j)) a.at(i, j) = kNegInf;
}

double crf_score(const RowMatrix& p, const CrfParams& a, const Labels& y) {
  check_shapes(p);
  if (y.size() != static_cast<std::size_t>(p.rows())) throw std::invalid_argument("crf_score: length mismatch");
  for (int t : y)
    if (t != kBF && t != kNotBF) throw std::invalid_argument("crf_score: label outside {BF, !BF}");
  double s = a(kBOS, y.front()) + a(y.back(), kEOS);
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += p(static_cast<Eigen::Index>(t), y[t]);
    if (t + 1 < y.size()) s += a(y[t], y[t + 1]);
  }
  return s;
}

double crf_log_partition(const RowMatrix& p, const CrfParams& a) { return forward_backward(p, a).log_z; }

CrfMarginals crf_marginals(const RowMatrix& p, const CrfParams& a) {
  const Lattice l = forward_backward(p, a);
  const Eigen::Index T = p.rows();
  CrfMarginals m;
  m.log_partition = l.log_z;
  m.node = ((l.alpha + l.beta).array() - l.log_z).exp();
  m.edge.resize(static_cast<std::size_t>(T - 1));
  for (Eigen::Index t = 0; t + 1 < T; ++t)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        m.edge[static_cast<std::size_t>(t)][i][j] =
            std::exp(l.alpha(t, i) + a(i, j) + p(t + 1, j) + l.beta(t + 1, j) - l.log_z);
  return m;
}

CrfLoss crf_nll(const RowMatrix& p, const CrfParams& a, const Labels& y) {
  const CrfMarginals m = crf_marginals(p, a);
  const Eigen::Index T = p.rows();
  CrfLoss out;
  out.loss = m.log_partition - crf_score(p, a, y);
  out.dp = m.node;
  for (Eigen::Index t = 0; t < T; ++t) out.dp(t, y[static_cast<std::size_t>(t)]) -= 1.0;
  for (int j = 0; j < 2; ++j) {
    out.da.at(kBOS, j) += m.node(0, j);
    out.da.at(j, kEOS) += m.node(T - 1, j);
  }
  out.da.at(kBOS, y.front()) -= 1.0;
  out.da.at(y.back(), kEOS) -= 1.0;
  for (Eigen::Index t = 0; t + 1 < T; ++t) {
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) out.da.at(i, j) += m.edge[static_cast<std::size_t>(t)][i][j];
    out.da.at(y[static_cast<std::size_t>(t)], y[static_cast<std::size_t>(t + 1)]) -= 1.0;
  }
  return out;
}

Decoded viterbi_decode(const RowMatrix& p, const CrfParams& a) {
  // Same states as below without the cap: BF is preferred until one is placed, !BF after.
  static const Machine m{3, {kBF, kNotBF, kNotBF}, {true, true, false}, {true, true, true}, {{2, 0}, {0, 1}, {2, 0}}};
  return run_machine(p, a, m);
}

Decoded constrained_decode(const RowMatrix& p, const CrfParams& a) {
  // 0: BF (now used), 1: !BF before the BF, 2: !BF after the BF.
  static const Machine m{3, {kBF, kNotBF, kNotBF}, {true, true, false}, {true, false, true}, {{2}, {0, 1}, {2}}};
  return run_machine(p, a, m);
}

std::size_t blame_index_from_labels(const Labels& labels, const RowMatrix& p, const CrfParams& a, bool* fallback) {
  std::size_t count = 0, idx = 0;
  for (std::size_t t = 0; t < labels.size(); ++t)
    if (labels[t] == kBF) {
      if (count == 0) idx = t;
      ++count;
    }
  if (fallback) *fallback = count != 1;
  if (count == 1) return idx;
  const CrfMarginals m = crf_marginals(p, a);
  Eigen::Index best = 0;
  for (Eigen::Index t = 1; t < m.node.rows(); ++t)
    if (m.node(t, kBF) > m.node(best, kBF)) best = t;
  return static_cast<std::size_t>(best);
}

}  // namespace crashloc
