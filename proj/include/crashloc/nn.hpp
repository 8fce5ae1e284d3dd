#pragma once

// Dense layers, LSTM and bidirectional LSTM with hand-derived gradients, inverted
// dropout, Adam and a central-difference gradient checker.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crashloc/random.hpp"
#include "crashloc/tensor.hpp"

namespace crashloc {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  double dropout = 0.25;
  std::size_t hidden = 200;
  std::uint64_t seed = 1;
  double validation_fraction = 0.1;
  double lambda = 0.5;               // weight of the problem-class loss
  double finetune_lr_scale = 0.3;
  double logreg_learning_rate = 1e-2;
  bool unconstrained_decode = false;  // plain Viterbi with marginal fallback

  void validate() const;
};

double sigmoid(double x);

/// Gate blocks are stacked in the order input, forget, output, candidate.
struct LstmParams {
  std::size_t input = 0;
  std::size_t hidden = 0;
  Tensor wx;  // 4H x D
  Tensor wh;  // 4H x H
  Tensor b;   // 4H

  static LstmParams zeros(std::size_t input, std::size_t hidden);
  /// Glorot-uniform weights per gate block, zero biases except forget = 1.
  static LstmParams init(std::size_t input, std::size_t hidden, Rng& rng);
  std::vector<Tensor*> tensors() { return {&wx, &wh, &b}; }
  std::vector<const Tensor*> tensors() const { return {&wx, &wh, &b}; }
};

struct LstmCache {
  RowMatrix x;      // T x D
  RowMatrix gates;  // T x 4H, post-activation
  RowMatrix c;      // T x H
  RowMatrix h;      // T x H
};

LstmCache lstm_forward(const LstmParams& p, const RowMatrix& x);

/// Accumulates parameter gradients into `grad` and returns dL/dx (empty when !need_dx).
RowMatrix lstm_backward(const LstmParams& p, const LstmCache& cache, const RowMatrix& dh, LstmParams& grad,
                        bool need_dx = true);

struct BiLstmCache {
  LstmCache fwd;
  LstmCache bwd;  // over the reversed sequence
  RowMatrix h;    // T x 2H, [forward ; backward] per row
};

BiLstmCache bilstm_forward(const LstmParams& fwd, const LstmParams& bwd, const RowMatrix& x);
RowMatrix bilstm_backward(const LstmParams& fwd, const LstmParams& bwd, const BiLstmCache& cache,
                          const RowMatrix& dh, LstmParams& gfwd, LstmParams& gbwd, bool need_dx = true);

RowMatrix reverse_rows(const RowMatrix& m);

/// y = W x + b per row of `x` (rows are samples). W is out x in.
RowMatrix dense_forward(const Tensor& w, const Tensor& b, const RowMatrix& x);

/// Inverted-dropout mask: entries are 0 or 1 / (1 - rate).
RowMatrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);
RowMatrix dropout(const RowMatrix& x, double rate, std::uint64_t seed, bool train);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState for_params(const std::vector<Tensor*>& params);
};

/// Throws TrainingError on a non-finite gradient, before touching any parameter.
void adam_step(AdamState& state, const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               double lr);

/// Max over entries of |analytic - numeric| / max(|analytic| + |numeric|, floor).
double grad_check(const std::function<double()>& loss, const std::vector<Tensor*>& params,
                  const std::vector<const Tensor*>& analytic, double eps = 1e-5, double floor = 1e-6);

}  // namespace crashloc
