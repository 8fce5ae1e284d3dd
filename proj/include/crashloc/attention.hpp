#pragma once

// Frame attention: score_t = w_a . h_t, alpha = softmax(score), h* = tanh(sum_t alpha_t h_t),
// and the emission head P_t = W [h_t ; h*] + b.

#include "crashloc/tensor.hpp"

namespace crashloc {

inline constexpr std::size_t kTagCount = 2;

struct AttentionParams {
  Tensor wa;  // 2H
};

struct AttentionResult {
  Eigen::VectorXd scores;
  Eigen::VectorXd alpha;
  Eigen::VectorXd h_star;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& x);

/// `score_bias` is added to every score before the softmax. Throws on T = 0.
AttentionResult attend(const RowMatrix& h, const AttentionParams& params, double score_bias = 0.0);

/// Returns dL/dh and accumulates dL/dw_a into `grad`.
RowMatrix attend_backward(const RowMatrix& h, const AttentionParams& params, const AttentionResult& result,
                          const Eigen::VectorXd& d_h_star, AttentionParams& grad);

struct EmissionHead {
  Tensor w;  // k x 4H
  Tensor b;  // k
};

RowMatrix emissions(const RowMatrix& h, const Eigen::VectorXd& h_star, const EmissionHead& head);

struct EmissionGrads {
  RowMatrix dh;
  Eigen::VectorXd d_h_star;
};

EmissionGrads emissions_backward(const RowMatrix& h, const Eigen::VectorXd& h_star, const EmissionHead& head,
                                 const RowMatrix& dp, EmissionHead& grad);

}  // namespace crashloc
