#include <gtest/gtest.h>

#include <cmath>

#include "crashloc/crf.hpp"
#include "crashloc/nn.hpp"
#include "oracles.hpp"

using namespace crashloc;
using oracles::random_matrix;

namespace {

CrfParams zero_crf() { return CrfParams{}; }

int bf_count(const Labels& y) {
  int n = 0;
  for (int v : y) n += v == kBF;
  return n;
}

}  // namespace

TEST(CrfParams, PinnedEntries) {
  CrfParams a;
  for (int f = 0; f < 4; ++f) {
    EXPECT_EQ(a(f, kBOS), kNegInf);
    EXPECT_EQ(a(kEOS, f), kNegInf);
  }
  EXPECT_EQ(a(kBOS, kBF), 0.0);
  a(kBF, kBOS) = 3.0;
  a.enforce_fixed();
  EXPECT_EQ(a(kBF, kBOS), kNegInf);
}

TEST(CrfScore, ZeroTransitions) {
  Rng rng(1);
  const RowMatrix p = random_matrix(4, 2, rng);
  const Labels y = {0, 1, 1, 0};
  EXPECT_NEAR(crf_score(p, zero_crf(), y), p(0, 0) + p(1, 1) + p(2, 1) + p(3, 0), 1e-15);
}

TEST(CrfScore, SingleEmission) {
  RowMatrix p(1, 2);
  p << 2, 5;
  EXPECT_DOUBLE_EQ(crf_score(p, zero_crf(), {kNotBF}), 5.0);
}

TEST(CrfScore, MatchesHandExpansion) {
  Rng rng(2);
  const RowMatrix p = random_matrix(4, 2, rng);
  const CrfParams a = oracles::random_crf(rng);
  const Labels y = {1, 0, 0, 1};
  const double hand = a(kBOS, 1) + p(0, 1) + a(1, 0) + p(1, 0) + a(0, 0) + p(2, 0) + a(0, 1) + p(3, 1) + a(1, kEOS);
  EXPECT_NEAR(crf_score(p, a, y), hand, 1e-14);
}

TEST(CrfScore, Errors) {
  const RowMatrix p = RowMatrix::Zero(2, 2);
  EXPECT_THROW(crf_score(p, zero_crf(), {0}), std::invalid_argument);
  EXPECT_THROW(crf_score(p, zero_crf(), {0, 2}), std::invalid_argument);
}

TEST(LogPartition, SmallCases) {
  EXPECT_NEAR(crf_log_partition(RowMatrix::Zero(1, 2), zero_crf()), std::log(2.0), 1e-15);
  EXPECT_NEAR(crf_log_partition(RowMatrix::Zero(2, 2), zero_crf()), std::log(4.0), 1e-15);
}

TEST(LogPartition, BruteForce) {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const auto t = static_cast<Eigen::Index>(1 + rng.below(8));
    const RowMatrix p = random_matrix(t, 2, rng, 3.0);
    const CrfParams a = oracles::random_crf(rng, 2.0);
    EXPECT_NEAR(crf_log_partition(p, a), oracles::brute_log_partition(p, a), 1e-9);
  }
}

TEST(LogPartition, LargeScoresStayFinite) {
  Rng rng(4);
  const RowMatrix p = random_matrix(6, 2, rng, 1000.0);
  const CrfParams a = oracles::random_crf(rng, 1000.0);
  const double z = crf_log_partition(p, a);
  EXPECT_TRUE(std::isfinite(z));
  EXPECT_NEAR(z, oracles::brute_log_partition(p, a), 1e-9 * std::abs(z));
}

TEST(LogPartition, BoundsEveryPath) {
  Rng rng(5);
  const RowMatrix p = random_matrix(5, 2, rng);
  const CrfParams a = oracles::random_crf(rng);
  const double z = crf_log_partition(p, a);
  for (const auto& y : oracles::all_sequences(5)) EXPECT_GT(z, crf_score(p, a, y));
}

TEST(LogPartition, EmissionShift) {
  Rng rng(6);
  const RowMatrix p = random_matrix(6, 2, rng);
  const CrfParams a = oracles::random_crf(rng);
  const RowMatrix q = p.array() + 2.5;
  EXPECT_NEAR(crf_log_partition(q, a), crf_log_partition(p, a) + 6 * 2.5, 1e-10);
  const auto m1 = crf_marginals(p, a);
  const auto m2 = crf_marginals(q, a);
  EXPECT_LT((m1.node - m2.node).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(viterbi_decode(p, a).labels, viterbi_decode(q, a).labels);
  EXPECT_EQ(constrained_decode(p, a).labels, constrained_decode(q, a).labels);
}

TEST(Marginals, UniformScores) {
  const auto m = crf_marginals(RowMatrix::Zero(4, 2), zero_crf());
  EXPECT_LT((m.node.array() - 0.5).abs().maxCoeff(), 1e-15);
}

TEST(Marginals, BruteForceAndConsistency) {
  Rng rng(7);
  for (int k = 0; k < 50; ++k) {
    const auto t = static_cast<Eigen::Index>(1 + rng.below(6));
    const RowMatrix p = random_matrix(t, 2, rng, 2.0);
    const CrfParams a = oracles::random_crf(rng);
    const auto m = crf_marginals(p, a);
    EXPECT_LT((m.node - oracles::brute_node_marginals(p, a)).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_EQ(m.edge.size(), static_cast<std::size_t>(t - 1));
    for (Eigen::Index i = 0; i < t; ++i) EXPECT_NEAR(m.node.row(i).sum(), 1.0, 1e-12);
    for (std::size_t i = 0; i + 1 < static_cast<std::size_t>(t); ++i)
      for (int y = 0; y < 2; ++y) {
        EXPECT_NEAR(m.edge[i][y][0] + m.edge[i][y][1], m.node(static_cast<Eigen::Index>(i), y), 1e-9);
        EXPECT_NEAR(m.edge[i][0][y] + m.edge[i][1][y], m.node(static_cast<Eigen::Index>(i + 1), y), 1e-9);
      }
  }
}

TEST(Nll, DegenerateDistributionHasZeroLoss) {
  CrfParams a;
  a(kBOS, kNotBF) = kNegInf;
  a(kBF, kBF) = kNegInf;
  a(kNotBF, kEOS) = kNegInf;
  a(kNotBF, kNotBF) = kNegInf;
  // Only BF, !BF, BF survives at T = 3.
  EXPECT_NEAR(crf_nll(RowMatrix::Zero(3, 2), a, {0, 1, 0}).loss, 0.0, 1e-12);
}

TEST(Nll, EqualsNegativeLogProbability) {
  Rng rng(8);
  const RowMatrix p = random_matrix(5, 2, rng);
  const CrfParams a = oracles::random_crf(rng);
  const Labels y = {1, 1, 0, 1, 1};
  const auto r = crf_nll(p, a, y);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_NEAR(r.loss, oracles::brute_log_partition(p, a) - oracles::path_score(p, a, y), 1e-10);
}

TEST(Nll, EmissionGradientIsMarginalMinusOneHot) {
  Rng rng(9);
  const RowMatrix p = random_matrix(6, 2, rng);
  const CrfParams a = oracles::random_crf(rng);
  const Labels y = {0, 1, 1, 1, 0, 1};
  const auto r = crf_nll(p, a, y);
  RowMatrix expect = crf_marginals(p, a).node;
  for (int i = 0; i < 6; ++i) expect(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  EXPECT_LT((r.dp - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Nll, FiniteDifferences) {
  Rng rng(10);
  for (int k = 0; k < 5; ++k) {
    Tensor pt = Tensor::from_matrix(random_matrix(5, 2, rng));
    CrfParams a = oracles::random_crf(rng);
    Labels y(5);
    for (auto& v : y) v = static_cast<int>(rng.below(2));
    const auto r = crf_nll(pt.mat(), a, y);
    Tensor dpt = Tensor::from_matrix(r.dp);
    // Pinned entries sit at -1e30; perturbing them is meaningless, so check the free block only.
    Tensor free({12});
    Tensor dfree({12});
    std::vector<std::pair<int, int>> idx;
    for (int f = 0; f < 4; ++f)
      for (int t = 0; t < 4; ++t)
        if (!CrfParams::is_fixed(f, t)) idx.emplace_back(f, t);
    ASSERT_EQ(idx.size(), 9u);
    free = Tensor({9});
    dfree = Tensor({9});
    for (std::size_t i = 0; i < 9; ++i) {
      free[i] = a(idx[i].first, idx[i].second);
      dfree[i] = r.da.at(static_cast<std::size_t>(idx[i].first), static_cast<std::size_t>(idx[i].second));
    }
    auto loss = [&] {
      CrfParams b = a;
      for (std::size_t i = 0; i < 9; ++i) b(idx[i].first, idx[i].second) = free[i];
      return crf_nll(pt.mat(), b, y).loss;
    };
    EXPECT_LT(grad_check(loss, {&pt, &free}, {&dpt, &dfree}), 1e-6);
    for (int f = 0; f < 4; ++f)
      for (int t = 0; t < 4; ++t)
        if (CrfParams::is_fixed(f, t))
          EXPECT_EQ(r.da.at(static_cast<std::size_t>(f), static_cast<std::size_t>(t)), 0.0);
  }
}

TEST(Viterbi, Basic) {
  RowMatrix p(1, 2);
  p << 3, 1;
  EXPECT_EQ(viterbi_decode(p, zero_crf()).labels, (Labels{kBF}));
  const auto d = viterbi_decode(RowMatrix::Zero(4, 2), zero_crf());
  // All sequences tie: BF on top, !BF below.
  EXPECT_EQ(d.labels, (Labels{0, 1, 1, 1}));
}

TEST(Viterbi, BruteForce) {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const auto t = static_cast<Eigen::Index>(1 + rng.below(8));
    const RowMatrix p = random_matrix(t, 2, rng, 2.0);
    const CrfParams a = oracles::random_crf(rng);
    const auto d = viterbi_decode(p, a);
    const auto b = oracles::brute_best(p, a, false);
    EXPECT_NEAR(d.score, b.score, 1e-9);
    EXPECT_NEAR(crf_score(p, a, d.labels), d.score, 1e-9);
    if (b.unique) EXPECT_EQ(d.labels, b.labels);
  }
}

TEST(Constrained, EqualsTopmostBfOnTies) {
  const auto d = constrained_decode(RowMatrix::Zero(5, 2), zero_crf());
  EXPECT_EQ(d.labels, (Labels{0, 1, 1, 1, 1}));
}

TEST(Constrained, MatchesViterbiWhenAlreadyValid) {
  RowMatrix p(4, 2);
  p << -1, 1, 3, -2, -1, 2, -2, 1;
  const auto v = viterbi_decode(p, zero_crf());
  ASSERT_EQ(bf_count(v.labels), 1);
  EXPECT_EQ(constrained_decode(p, zero_crf()).labels, v.labels);
}

TEST(Constrained, BfEverywherePicksBest) {
  RowMatrix p(4, 2);
  p << 2, 0, 5, 0, 3, 0, 4, 0;
  EXPECT_EQ(constrained_decode(p, zero_crf()).labels, (Labels{1, 0, 1, 1}));
}

TEST(Constrained, DepthOne) {
  RowMatrix p(1, 2);
  p << -10, 10;
  EXPECT_EQ(constrained_decode(p, zero_crf()).labels, (Labels{kBF}));
}

TEST(Constrained, BruteForce) {
  Rng rng(12);
  for (int k = 0; k < 100; ++k) {
    const auto t = static_cast<Eigen::Index>(1 + rng.below(8));
    const RowMatrix p = random_matrix(t, 2, rng, 2.0);
    const CrfParams a = oracles::random_crf(rng);
    const auto d = constrained_decode(p, a);
    const auto b = oracles::brute_best(p, a, true);
    EXPECT_EQ(bf_count(d.labels), 1);
    EXPECT_NEAR(d.score, b.score, 1e-9);
    if (b.unique) EXPECT_EQ(d.labels, b.labels);
  }
}

TEST(Decode, TieBreakMatchesEnumeration) {
  // Integer scores create many exact ties.
  Rng rng(13);
  for (int k = 0; k < 200; ++k) {
    const auto t = static_cast<Eigen::Index>(1 + rng.below(7));
    RowMatrix p(t, 2);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<double>(rng.below(3));
    CrfParams a;
    for (int f = 0; f < 4; ++f)
      for (int to = 0; to < 4; ++to)
        if (!CrfParams::is_fixed(f, to)) a(f, to) = static_cast<double>(rng.below(2));
    EXPECT_EQ(constrained_decode(p, a).labels, oracles::brute_best(p, a, true).labels);
    EXPECT_EQ(viterbi_decode(p, a).labels, oracles::brute_best(p, a, false).labels);
  }
}

TEST(Constrained, AlwaysOneBf) {
  Rng rng(14);
  for (int k = 0; k < 2000; ++k) {
    const auto t = static_cast<Eigen::Index>(1 + rng.below(40));
    const auto d = constrained_decode(random_matrix(t, 2, rng, 5.0), oracles::random_crf(rng, 5.0));
    ASSERT_EQ(bf_count(d.labels), 1);
  }
}

TEST(BlameIndex, FromLabelsAndFallback) {
  const RowMatrix p = RowMatrix::Zero(3, 2);
  bool fb = true;
  EXPECT_EQ(blame_index_from_labels({1, 0, 1}, p, zero_crf(), &fb), 1u);
  EXPECT_FALSE(fb);
  RowMatrix q(3, 2);
  q << 0, 0, 0, 0, 4, 0;
  EXPECT_EQ(blame_index_from_labels({1, 1, 1}, q, zero_crf(), &fb), 2u);
  EXPECT_TRUE(fb);
  EXPECT_EQ(blame_index_from_labels({0, 0, 0}, q, zero_crf(), &fb), 2u);
  EXPECT_TRUE(fb);
}
