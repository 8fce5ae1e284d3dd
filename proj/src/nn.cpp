#include "crashloc/nn.hpp"

#include <algorithm>
#include <cmath>

namespace crashloc {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (hidden == 0) throw std::invalid_argument("hidden must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("validation_fraction must be in (0, 1)");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (!(finetune_lr_scale > 0.0)) throw std::invalid_argument("finetune_lr_scale must be positive");
  if (!(logreg_learning_rate > 0.0)) throw std::invalid_argument("logreg_learning_rate must be positive");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

LstmParams LstmParams::zeros(std::size_t input, std::size_t hidden) {
  LstmParams p;
  p.input = input;
  p.hidden = hidden;
  p.wx = Tensor({4 * hidden, input});
  p.wh = Tensor({4 * hidden, hidden});
  p.b = Tensor({4 * hidden});
  return p;
}

LstmParams LstmParams::init(std::size_t input, std::size_t hidden, Rng& rng) {
  LstmParams p = zeros(input, hidden);
  const double rx = std::sqrt(6.0 / static_cast<double>(input + hidden));
  const double rh = std::sqrt(6.0 / static_cast<double>(2 * hidden));
  for (std::size_t i = 0; i < p.wx.size(); ++i) p.wx[i] = rng.uniform(-rx, rx);
  for (std::size_t i = 0; i < p.wh.size(); ++i) p.wh[i] = rng.uniform(-rh, rh);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) p.b[i] = 1.0;
  return p;
}

LstmCache lstm_forward(const LstmParams& p, const RowMatrix& x) {
  const auto H = static_cast<Eigen::Index>(p.hidden);
  if (static_cast<std::size_t>(x.cols()) != p.input)
    throw std::invalid_argument("lstm_forward: input width " + std::to_string(x.cols()) + " != " +
                                std::to_string(p.input));
  const Eigen::Index T = x.rows();
  LstmCache cache;
  cache.x = x;
  cache.gates = x * p.wx.mat().transpose();
  cache.gates.rowwise() += p.b.vec().transpose();
  cache.c.resize(T, H);
  cache.h.resize(T, H);
  const auto wh = p.wh.mat();
  Eigen::RowVectorXd h_prev = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd c_prev = Eigen::RowVectorXd::Zero(H);
  for (Eigen::Index t = 0; t < T; ++t) {
    auto g = cache.gates.row(t);
    if (t > 0) g.noalias() += h_prev * wh.transpose();
    for (Eigen::Index j = 0; j < 3 * H; ++j) g[j] = sigmoid(g[j]);
    for (Eigen::Index j = 3 * H; j < 4 * H; ++j) g[j] = std::tanh(g[j]);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double c = g[H + j] * c_prev[j] + g[j] * g[3 * H + j];
      cache.c(t, j) = c;
      cache.h(t, j) = g[2 * H + j] * std::tanh(c);
    }
    h_prev = cache.h.row(t);
    c_prev = cache.c.row(t);
  }
  return cache;
}

RowMatrix lstm_backward(const LstmParams& p, const LstmCache& cache, const RowMatrix& dh, LstmParams& grad,
                        bool need_dx) {
  const auto H = static_cast<Eigen::Index>(p.hidden);
  const Eigen::Index T = cache.h.rows();
  if (dh.rows() != T || dh.cols() != H) throw std::invalid_argument("lstm_backward: gradient shape mismatch");
  RowMatrix da(T, 4 * H);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd dc_next = Eigen::RowVectorXd::Zero(H);
  const auto wh = p.wh.mat();
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto g = cache.gates.row(t);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double i = g[j], f = g[H + j], o = g[2 * H + j], cand = g[3 * H + j];
      const double tc = std::tanh(cache.c(t, j));
      const double c_prev = t > 0 ? cache.c(t - 1, j) : 0.0;
      const double dhj = dh(t, j) + dh_next[j];
      const double dc = dhj * o * (1.0 - tc * tc) + dc_next[j];
      da(t, j) = dc * cand * i * (1.0 - i);
      da(t, H + j) = dc * c_prev * f * (1.0 - f);
      da(t, 2 * H + j) = dhj * tc * o * (1.0 - o);
      da(t, 3 * H + j) = dc * i * (1.0 - cand * cand);
      dc_next[j] = dc * f;
    }
    dh_next.noalias() = da.row(t) * wh;
  }
  grad.wx.mat().noalias() += da.transpose() * cache.x;
  if (T > 1) grad.wh.mat().noalias() += da.bottomRows(T - 1).transpose() * cache.h.topRows(T - 1);
  grad.b.vec() += da.colwise().sum().transpose();
  if (!need_dx) return {};
  return da * p.wx.mat();
}

RowMatrix reverse_rows(const RowMatrix& m) { return m.colwise().reverse(); }

BiLstmCache bilstm_forward(const LstmParams& fwd, const LstmParams& bwd, const RowMatrix& x) {
  if (fwd.input != bwd.input || fwd.hidden != bwd.hidden)
    throw std::invalid_argument("bilstm_forward: direction shapes differ");
  BiLstmCache cache;
  cache.fwd = lstm_forward(fwd, x);
  cache.bwd = lstm_forward(bwd, reverse_rows(x));
  const auto H = static_cast<Eigen::Index>(fwd.hidden);
  cache.h.resize(x.rows(), 2 * H);
  cache.h.leftCols(H) = cache.fwd.h;
  cache.h.rightCols(H) = reverse_rows(cache.bwd.h);
  return cache;
}

RowMatrix bilstm_backward(const LstmParams& fwd, const LstmParams& bwd, const BiLstmCache& cache,
                          const RowMatrix& dh, LstmParams& gfwd, LstmParams& gbwd, bool need_dx) {
  const auto H = static_cast<Eigen::Index>(fwd.hidden);
  if (dh.cols() != 2 * H) throw std::invalid_argument("bilstm_backward: gradient shape mismatch");
  RowMatrix dx = lstm_backward(fwd, cache.fwd, dh.leftCols(H), gfwd, need_dx);
  RowMatrix dxb = lstm_backward(bwd, cache.bwd, reverse_rows(dh.rightCols(H)), gbwd, need_dx);
  if (!need_dx) return {};
  dx += reverse_rows(dxb);
  return dx;
}

RowMatrix dense_forward(const Tensor& w, const Tensor& b, const RowMatrix& x) {
  if (static_cast<std::size_t>(x.cols()) != w.cols() || b.size() != w.rows())
    throw std::invalid_argument("dense_forward: shape mismatch");
  RowMatrix y = x * w.mat().transpose();
  y.rowwise() += b.vec().transpose();
  return y;
}

RowMatrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  RowMatrix m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rate > 0.0 && rng.uniform() < rate ? 0.0 : keep;
  return m;
}

RowMatrix dropout(const RowMatrix& x, double rate, std::uint64_t seed, bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  Rng rng(seed);
  return x.cwiseProduct(dropout_mask(x.rows(), x.cols(), rate, rng));
}

AdamState AdamState::for_params(const std::vector<Tensor*>& params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_step(AdamState& state, const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(state.m[k]))
      throw std::invalid_argument("adam_step: shape mismatch at tensor " + std::to_string(k));
    if (!grads[k]->all_finite())
      throw TrainingError("non-finite gradient in tensor " + std::to_string(k) + " at step " +
                          std::to_string(state.step + 1));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

double grad_check(const std::function<double()>& loss, const std::vector<Tensor*>& params,
                  const std::vector<const Tensor*>& analytic, double eps, double floor) {
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: count mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.same_shape(*analytic[k])) throw std::invalid_argument("grad_check: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double up = loss();
      p[i] = saved - eps;
      const double down = loss();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = (*analytic[k])[i];
      const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace crashloc
