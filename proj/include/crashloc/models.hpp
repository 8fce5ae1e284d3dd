#pragma once

// Blame predictors: TopFrame / SecondFrame / MostFreqTopFrame heuristics,
// per-frame logistic regression, the BiLSTM-CRF-attention tagger and its
// multi-task variant with a problem-class head. Plus training, fine-tuning and
// the binary model file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crashloc/attention.hpp"
#include "crashloc/corpus.hpp"
#include "crashloc/crf.hpp"
#include "crashloc/featurizer.hpp"
#include "crashloc/nn.hpp"

namespace crashloc {

enum class ModelKind { kTopFrame, kSecondFrame, kMostFreq, kLogReg, kBiLstmCrfAttn, kDeepAnalyze };

const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);  // throws std::invalid_argument
bool is_sequence_model(ModelKind kind);
bool needs_features(ModelKind kind);

// ---- heuristics ----

using BlameFrequencyTable = std::map<std::string, std::size_t>;

/// Blamed-method counts over labeled records; unlabeled records are skipped.
BlameFrequencyTable fit_blame_table(const Corpus& train);

/// kind is one of the three heuristics; `table` is required for kMostFreq.
std::size_t predict_heuristic(ModelKind kind, const CrashRecord& record, const BlameFrequencyTable* table = nullptr);

// ---- parameters ----

struct LogRegParams {
  Tensor w;  // D
  Tensor b{1};
};

struct SequenceParams {
  LstmParams fwd;
  LstmParams bwd;
  AttentionParams attn;
  EmissionHead head;
  CrfParams crf;
  Tensor wc;  // C x 2H (C = 0 without a class head)
  Tensor bc;  // C

  static SequenceParams zeros(std::size_t input, std::size_t hidden, std::size_t classes);
  /// The class head draws from its own stream, so the shared layers get the same
  /// initial values with or without it.
  static SequenceParams init(std::size_t input, std::size_t hidden, std::size_t classes, std::uint64_t seed);

  std::size_t input() const { return fwd.input; }
  std::size_t hidden() const { return fwd.hidden; }
  std::size_t classes() const { return bc.empty() ? 0 : bc.size(); }

  /// Fixed order: fwd (wx, wh, b), bwd (wx, wh, b), wa, head w, head b, crf, wc, bc.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  void zero();
};

struct Example {
  RowMatrix x;
  int blame = -1;
  int cls = -1;  // index into the class list, -1 when unknown
};

struct SequenceCache {
  BiLstmCache enc;
  RowMatrix mask;  // empty when no dropout
  RowMatrix h;     // encoder output after dropout
  AttentionResult att;
  RowMatrix p;
  Eigen::VectorXd class_prob;
};

/// `mask` (T x 2H) multiplies the encoder output when given.
SequenceCache sequence_forward(const SequenceParams& params, const RowMatrix& x, const RowMatrix* mask = nullptr);

/// CRF NLL plus lambda times class cross-entropy (the latter only when
/// `multitask` and ex.cls >= 0). Gradients are added into `grad`.
double sequence_loss(const SequenceParams& params, const Example& ex, bool multitask, double lambda,
                     const RowMatrix* mask, SequenceParams* grad);

// ---- bundle ----

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_accuracy = 0.0;
};

struct ModelBundle {
  ModelKind kind = ModelKind::kTopFrame;
  TrainConfig config;
  Featurizer featurizer;
  std::vector<std::string> classes;
  BlameFrequencyTable table;
  LogRegParams logreg;
  SequenceParams seq;
  std::uint64_t train_digest = 0;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;

  bool has_class_head() const { return kind == ModelKind::kDeepAnalyze && !classes.empty(); }
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<Example> make_examples(const Corpus& corpus, const Featurizer& featurizer,
                                   const std::vector<std::string>& classes, bool require_labels);

/// Class-weighted per-frame log loss; `start` warm-starts from existing weights.
LogRegParams train_logreg_params(const std::vector<Example>& train, const std::vector<Example>& valid,
                                 const TrainConfig& config, const LogRegParams* start = nullptr,
                                 std::vector<EpochLog>* history = nullptr);
std::size_t predict_logreg(const LogRegParams& params, const RowMatrix& x);

ModelBundle train_logreg(const Corpus& train, const Corpus& valid, const TrainConfig& config,
                         FeaturizerOptions options = {});

/// Throws DataError on empty or unlabeled corpora, TrainingError on a non-finite loss.
ModelBundle train_sequence_model(ModelKind kind, const Corpus& train, const Corpus& valid,
                                 const TrainConfig& config, FeaturizerOptions options = {});

/// Any kind: heuristics, logreg or sequence models.
ModelBundle train_model(ModelKind kind, const Corpus& train, const Corpus& valid, const TrainConfig& config,
                        FeaturizerOptions options = {});

/// Continues training from the global weights with lr scaled by config.finetune_lr_scale.
/// An empty target corpus returns the global bundle unchanged.
ModelBundle fine_tune(const ModelBundle& global, const Corpus& target_train, const Corpus& target_valid,
                      const TrainConfig& config);

struct BlamePrediction {
  std::size_t index = 0;
  std::vector<double> alpha;  // attention weights; empty for non-sequence models
  bool fallback = false;      // unconstrained decode did not produce exactly one BF
};

BlamePrediction predict_blame(const ModelBundle& bundle, const CrashRecord& record);
std::vector<BlamePrediction> predict_blame(const ModelBundle& bundle, const Corpus& corpus);

struct ClassPrediction {
  std::string problem_class;
  std::vector<double> probabilities;  // aligned with bundle.classes
};

/// Throws std::invalid_argument for bundles without a class head.
ClassPrediction predict_problem_class(const ModelBundle& bundle, const CrashRecord& record);

std::string serialize_model(const ModelBundle& bundle);
ModelBundle deserialize_model(const std::string& bytes);  // throws DataError
void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace crashloc
