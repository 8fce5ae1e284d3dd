#pragma once

// Per-frame feature vectors: a tf-idf block for the namespace, a tf-idf block for
// the method, then ten engineered indicators.

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "crashloc/corpus.hpp"
#include "crashloc/tensor.hpp"

namespace crashloc {

std::vector<std::string> tokenize(std::string_view identifier);

struct TfIdfVocab {
  std::size_t dimension = 0;
  std::vector<std::string> tokens;  // tokens[i] owns slot i; size <= dimension
  std::vector<double> idf;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const { return tokens.size(); }
  void rebuild_index();
};

enum class FrameField { kNamespace, kMethod };

/// Top-`n` tokens by document frequency (documents are single frame fields),
/// ties broken alphabetically; idf = ln((1 + D) / (1 + df)) + 1.
/// Throws DataError on an empty corpus.
TfIdfVocab fit_tfidf(const Corpus& train, std::size_t n, FrameField field);

/// Raw term counts times idf, then L2-normalized when nonzero. Out-of-vocabulary
/// tokens contribute nothing.
Eigen::VectorXd tfidf_vector(const std::vector<std::string>& tokens, const TfIdfVocab& vocab);

enum class AppMatch {
  kBaseNamePrefix,  // base name == app, or app followed by a non-word character
  kExact,
  kSubstring,
};

struct FeaturizerOptions {
  std::size_t dimension = 64;
  AppMatch app_match = AppMatch::kBaseNamePrefix;
};

inline constexpr std::size_t kEngineeredFeatures = 10;

enum EngineeredSlot : std::size_t {
  kIsAppnameInFrame = 0,
  kIsFirstAppFrame,
  kIsKernelCode,
  kIsNtdllCode,
  kIsExceptionInFrame,
  kNormFramePosition,
  kIsMethodUnknown,
  kIsMethodEmpty,
  kIsBinaryUnknown,
  kIsEmptyFrame,
};

const char* engineered_feature_name(std::size_t slot);

bool app_name_matches(std::string_view binary, std::string_view app, AppMatch mode);

struct FeaturizedStack {
  Tensor features;  // depth x (2n + 10)
  std::string app;
  std::size_t depth() const { return features.rows(); }
};

/// Fitted vocabularies plus options; immutable once fitted.
class Featurizer {
 public:
  Featurizer() = default;
  Featurizer(TfIdfVocab name_space, TfIdfVocab method, FeaturizerOptions options);

  static Featurizer fit(const Corpus& train, FeaturizerOptions options = {});

  std::size_t dimension() const { return 2 * options_.dimension + kEngineeredFeatures; }
  const TfIdfVocab& namespace_vocab() const { return namespace_; }
  const TfIdfVocab& method_vocab() const { return method_; }
  const FeaturizerOptions& options() const { return options_; }

  /// `app` defaults to record.app when empty.
  FeaturizedStack transform(const CrashRecord& record, std::string_view app = {}) const;
  std::vector<FeaturizedStack> transform(const Corpus& corpus) const;

  /// "namespace <token>", "method <token>", then the engineered feature names.
  std::vector<std::string> feature_names() const;

 private:
  TfIdfVocab namespace_;
  TfIdfVocab method_;
  FeaturizerOptions options_;
};

FeaturizedStack featurize_stack(const CrashRecord& record, const Featurizer& featurizer,
                                std::string_view app_name);

}  // namespace crashloc
