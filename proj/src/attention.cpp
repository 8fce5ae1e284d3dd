#include "crashloc/attention.hpp"

#include <stdexcept>

namespace crashloc {

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  if (x.size() == 0) return x;
  Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

AttentionResult attend(const RowMatrix& h, const AttentionParams& params, double score_bias) {
  if (h.rows() == 0) throw std::invalid_argument("attend: empty sequence");
  if (static_cast<std::size_t>(h.cols()) != params.wa.size()) throw std::invalid_argument("attend: shape mismatch");
  AttentionResult r;
  r.scores = h * params.wa.vec();
  r.scores.array() += score_bias;
  r.alpha = softmax(r.scores);
  r.h_star = (h.transpose() * r.alpha).array().tanh();
  return r;
}

RowMatrix attend_backward(const RowMatrix& h, const AttentionParams& params, const AttentionResult& result,
                          const Eigen::VectorXd& d_h_star, AttentionParams& grad) {
  const Eigen::VectorXd ds = d_h_star.array() * (1.0 - result.h_star.array().square());
  RowMatrix dh = result.alpha * ds.transpose();
  const Eigen::VectorXd dalpha = h * ds;
  const double mean = result.alpha.dot(dalpha);
  const Eigen::VectorXd dscore = result.alpha.array() * (dalpha.array() - mean);
  grad.wa.vec() += h.transpose() * dscore;
  dh.noalias() += dscore * params.wa.vec().transpose();
  return dh;
}

RowMatrix emissions(const RowMatrix& h, const Eigen::VectorXd& h_star, const EmissionHead& head) {
  const Eigen::Index w = h.cols();
  if (head.w.cols() != static_cast<std::size_t>(2 * w) || h_star.size() != w || head.b.size() != head.w.rows())
    throw std::invalid_argument("emissions: shape mismatch");
  const auto W = head.w.mat();
  RowMatrix p = h * W.leftCols(w).transpose();
  const Eigen::RowVectorXd global = (W.rightCols(w) * h_star).transpose() + head.b.vec().transpose();
  p.rowwise() += global;
  return p;
}

EmissionGrads emissions_backward(const RowMatrix& h, const Eigen::VectorXd& h_star, const EmissionHead& head,
                                 const RowMatrix& dp, EmissionHead& grad) {
  const Eigen::Index w = h.cols();
  const auto W = head.w.mat();
  auto gW = grad.w.mat();
  const Eigen::VectorXd dp_sum = dp.colwise().sum().transpose();
  gW.leftCols(w).noalias() += dp.transpose() * h;
  gW.rightCols(w).noalias() += dp_sum * h_star.transpose();
  grad.b.vec() += dp_sum;
  EmissionGrads g;
  g.dh = dp * W.leftCols(w);
  g.d_h_star = W.rightCols(w).transpose() * dp_sum;
  return g;
}

}  // namespace crashloc
