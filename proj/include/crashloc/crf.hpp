#pragma once

// Linear-chain CRF over the tags {BF, !BF} with BOS/EOS boundary transitions.

#include <array>
#include <vector>

#include "crashloc/tensor.hpp"

namespace crashloc {

enum Tag : int { kBF = 0, kNotBF = 1, kBOS = 2, kEOS = 3 };

inline constexpr double kNegInf = -1e30;

/// 4 x 4 transition scores A[from][to]. Entries into BOS and out of EOS are pinned to kNegInf.
struct CrfParams {
  Tensor a{4, 4};

  CrfParams();
  double operator()(int from, int to) const { return a.at(from, to); }
  double& operator()(int from, int to) { return a.at(from, to); }
  static bool is_fixed(int from, int to) { return to == kBOS || from == kEOS; }
  void enforce_fixed();
};

using Labels = std::vector<int>;

double crf_score(const RowMatrix& p, const CrfParams& a, const Labels& y);
double crf_log_partition(const RowMatrix& p, const CrfParams& a);

struct CrfMarginals {
  RowMatrix node;                                      // T x 2
  std::vector<std::array<std::array<double, 2>, 2>> edge;  // T-1 entries of [from][to]
  double log_partition = 0.0;
};

CrfMarginals crf_marginals(const RowMatrix& p, const CrfParams& a);

struct CrfLoss {
  double loss = 0.0;
  RowMatrix dp;  // T x 2
  Tensor da{4, 4};  // zero at pinned entries
};

CrfLoss crf_nll(const RowMatrix& p, const CrfParams& a, const Labels& y);

struct Decoded {
  Labels labels;
  double score = 0.0;
};

/// Highest-scoring sequence. Ties prefer the earliest first BF, then !BF at each
/// later position in turn (so an all-equal lattice gives BF, !BF, !BF, ...).
Decoded viterbi_decode(const RowMatrix& p, const CrfParams& a);

/// Best sequence with exactly one BF; ties prefer the topmost BF.
Decoded constrained_decode(const RowMatrix& p, const CrfParams& a);

/// Index of the single BF in `labels`, or the node-marginal argmax when the count is not one.
std::size_t blame_index_from_labels(const Labels& labels, const RowMatrix& p, const CrfParams& a,
                                    bool* fallback = nullptr);

}  // namespace crashloc
