#pragma once

// Accuracy metrics, evaluation reports, feature importances and transfer
// learning curves.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "crashloc/models.hpp"

namespace crashloc {

/// Exact-index-match fraction. Throws std::invalid_argument on empty or unequal inputs.
double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truths);

struct ClassAccuracy {
  std::string problem_class;
  std::size_t records = 0;
  std::size_t correct = 0;
  double accuracy() const { return records ? static_cast<double>(correct) / static_cast<double>(records) : 0.0; }
};

/// One row per class present, sorted by class name.
std::vector<ClassAccuracy> per_class_accuracy(const std::vector<std::size_t>& predictions,
                                              const std::vector<std::size_t>& truths,
                                              const std::vector<std::string>& classes);

/// |a1 - a2| / mean(a1, a2) * 100.
double improvement_pct(double a1, double a2);

struct FeatureImportanceReport {
  std::vector<std::pair<std::string, double>> ranked;  // descending value, then name
};

/// Logistic regression: its coefficients. Sequence models: per input feature, the
/// sum over hidden units of the candidate-gate input weights of both directions
/// (all four gates when `all_gates`). Normalized to max |value| = 1.
FeatureImportanceReport feature_importance(const ModelBundle& bundle, bool all_gates = false);

struct PredictionLogEntry {
  std::uint64_t record_hash = 0;
  std::size_t truth = 0;
  std::size_t predicted = 0;
  std::vector<double> alpha;
};

struct EvalReport {
  std::string model_kind;
  double accuracy = 0.0;
  std::size_t records = 0;
  std::vector<ClassAccuracy> per_class;
  std::map<long, std::size_t> offset_histogram;  // predicted - true index
  std::vector<std::pair<std::string, std::string>> config;
  std::uint64_t train_digest = 0;
  std::uint64_t test_digest = 0;
  std::vector<PredictionLogEntry> log;

  std::string log_text() const;
  std::uint64_t log_digest() const;
};

/// Throws DataError if the test corpus is empty or has unlabeled records.
EvalReport evaluate(const ModelBundle& bundle, const Corpus& test);

std::vector<std::pair<std::string, std::string>> config_echo(const ModelBundle& bundle);

/// report.csv, per_class.csv, offsets.csv, predictions.log and summary.txt.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
std::string report_summary_text(const EvalReport& report);

/// Accuracy recomputed from a prediction log produced by EvalReport::log_text.
double accuracy_from_log(const std::string& log_text);

struct CurvePoint {
  std::size_t k = 0;
  double finetune_accuracy = 0.0;
  double scratch_accuracy = 0.0;
};

inline const std::vector<std::size_t>& default_k_list() {
  static const std::vector<std::size_t> k = {0, 100, 500, 1000, 2000, 5000};
  return k;
}

/// The first `k` records of a seeded shuffle of `pool`; the sample both
/// learning-curve arms and the finetune command draw.
Corpus curve_sample(const Corpus& pool, std::size_t k, std::uint64_t seed);

/// For each K the first K records of a seeded shuffle of `target_train` feed both
/// arms: fine-tuning the global model and training the same kind from scratch.
/// K = 0 reports the global model and TopFrame. Throws std::invalid_argument when
/// a K exceeds the target training corpus.
std::vector<CurvePoint> learning_curve(const ModelBundle& global, const Corpus& target_train,
                                       const Corpus& target_valid, const Corpus& target_test,
                                       const std::vector<std::size_t>& k_list, const TrainConfig& config);

std::string curve_csv(const std::vector<CurvePoint>& curve);
std::string feature_importance_csv(const FeatureImportanceReport& report);

}  // namespace crashloc
