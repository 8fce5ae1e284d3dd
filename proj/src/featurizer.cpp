#include "crashloc/featurizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <unordered_set>

namespace crashloc {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void split_run(std::string_view run, std::vector<std::string>& out) {
  std::size_t start = 0;
  for (std::size_t i = 1; i < run.size(); ++i) {
    const char p = run[i - 1];
    const char c = run[i];
    bool cut = is_digit(p) != is_digit(c);
    if (!cut && is_lower(p) && is_upper(c)) cut = true;
    // End of an acronym: "XGISwap" splits before "Swap".
    if (!cut && is_upper(p) && is_upper(c) && i + 1 < run.size() && is_lower(run[i + 1])) cut = true;
    if (cut) {
      out.push_back(lower(run.substr(start, i - start)));
      start = i;
    }
  }
  out.push_back(lower(run.substr(start)));
}

std::string base_name(std::string_view binary) {
  std::string b = lower(binary);
  const auto slash = b.find_last_of("/\\");
  if (slash != std::string::npos) b = b.substr(slash + 1);
  const auto dot = b.rfind('.');
  if (dot != std::string::npos && dot > 0) b = b.substr(0, dot);
  return b;
}

bool ends_with_ci(std::string_view s, std::string_view suffix) {
  if (s.size() < suffix.size()) return false;
  return lower(s.substr(s.size() - suffix.size())) == suffix;
}

const std::unordered_set<std::string>& exception_tokens() {
  static const std::unordered_set<std::string> s = {"exception", "throw", "raise", "dispatch", "rethrow"};
  return s;
}

constexpr std::array<const char*, kEngineeredFeatures> kEngineeredNames = {
    "is_appname_in_frame", "is_first_app_frame", "is_kernel_code",     "is_ntdll_code",
    "is_exception_in_frame", "norm_frame_position", "is_method_unknown", "is_method_empty",
    "is_binary_unknown",   "is_empty_frame"};

}  // namespace

std::vector<std::string> tokenize(std::string_view identifier) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < identifier.size()) {
    if (!is_alnum(identifier[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < identifier.size() && is_alnum(identifier[j])) ++j;
    split_run(identifier.substr(i, j - i), out);
    i = j;
  }
  return out;
}

void TfIdfVocab::rebuild_index() {
  index.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i) index.emplace(tokens[i], i);
}

TfIdfVocab fit_tfidf(const Corpus& train, std::size_t n, FrameField field) {
  if (train.empty()) throw DataError("cannot fit tf-idf on an empty corpus");
  if (n == 0) throw std::invalid_argument("tf-idf dimension must be positive");
  std::unordered_map<std::string, std::size_t> df;
  std::size_t documents = 0;
  for (const auto& r : train.records) {
    for (const auto& f : r.stack) {
      ++documents;
      const auto toks = tokenize(field == FrameField::kNamespace ? f.name_space : f.method);
      std::unordered_set<std::string> seen(toks.begin(), toks.end());
      for (const auto& t : seen) ++df[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > n) ranked.resize(n);

  TfIdfVocab v;
  v.dimension = n;
  const double d = static_cast<double>(documents);
  for (const auto& [tok, count] : ranked) {
    v.tokens.push_back(tok);
    v.idf.push_back(std::log((1.0 + d) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  v.rebuild_index();
  return v;
}

Eigen::VectorXd tfidf_vector(const std::vector<std::string>& tokens, const TfIdfVocab& vocab) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.dimension));
  for (const auto& t : tokens) {
    const auto it = vocab.index.find(t);
    if (it != vocab.index.end()) v[static_cast<Eigen::Index>(it->second)] += vocab.idf[it->second];
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

const char* engineered_feature_name(std::size_t slot) {
  if (slot >= kEngineeredFeatures) throw std::out_of_range("engineered feature slot");
  return kEngineeredNames[slot];
}

bool app_name_matches(std::string_view binary, std::string_view app, AppMatch mode) {
  if (app.empty() || binary.empty()) return false;
  const std::string a = lower(app);
  const std::string b = base_name(binary);
  switch (mode) {
    case AppMatch::kExact:
      return b == a;
    case AppMatch::kSubstring:
      return b.find(a) != std::string::npos;
    case AppMatch::kBaseNamePrefix:
      if (b == a) return true;
      return b.size() > a.size() && b.compare(0, a.size(), a) == 0 && !is_alnum(b[a.size()]) &&
             b[a.size()] != '_';
  }
  return false;
}

Featurizer::Featurizer(TfIdfVocab name_space, TfIdfVocab method, FeaturizerOptions options)
    : namespace_(std::move(name_space)), method_(std::move(method)), options_(options) {
  if (namespace_.dimension != options_.dimension || method_.dimension != options_.dimension)
    throw std::invalid_argument("vocabulary dimension does not match featurizer options");
  namespace_.rebuild_index();
  method_.rebuild_index();
}

Featurizer Featurizer::fit(const Corpus& train, FeaturizerOptions options) {
  return Featurizer(fit_tfidf(train, options.dimension, FrameField::kNamespace),
                    fit_tfidf(train, options.dimension, FrameField::kMethod), options);
}

FeaturizedStack Featurizer::transform(const CrashRecord& record, std::string_view app) const {
  const std::string app_name(app.empty() ? std::string_view(record.app) : app);
  const std::size_t n = options_.dimension;
  const std::size_t depth = record.depth();
  FeaturizedStack out;
  out.app = app_name;
  out.features = Tensor({depth, dimension()});
  bool seen_app = false;
  for (std::size_t i = 0; i < depth; ++i) {
    const Frame& f = record.stack[i];
    auto row = out.features.mat().row(static_cast<Eigen::Index>(i));
    const auto ns_tokens = tokenize(f.name_space);
    const auto method_tokens = tokenize(f.method);
    row.segment(0, static_cast<Eigen::Index>(n)) = tfidf_vector(ns_tokens, namespace_).transpose();
    row.segment(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) =
        tfidf_vector(method_tokens, method_).transpose();
    auto slot = [&](std::size_t s) -> double& { return out.features.at(i, 2 * n + s); };

    const bool app_hit = app_name_matches(f.binary, app_name, options_.app_match);
    slot(kIsAppnameInFrame) = app_hit;
    if (app_hit && !seen_app) {
      slot(kIsFirstAppFrame) = 1.0;
      seen_app = true;
    }
    slot(kIsKernelCode) = ends_with_ci(f.binary, ".sys") || lower(f.binary) == "nt";
    slot(kIsNtdllCode) = !f.binary.empty() && base_name(f.binary) == "ntdll";
    bool exc = false;
    for (const auto& t : method_tokens) exc = exc || exception_tokens().count(t) > 0;
    slot(kIsExceptionInFrame) = exc;
    slot(kNormFramePosition) = depth > 1 ? static_cast<double>(i) / static_cast<double>(depth - 1) : 0.0;
    slot(kIsMethodUnknown) = !f.has_symbol || f.unknown_method || lower(f.method) == "unknown";
    slot(kIsMethodEmpty) = f.method.empty();
    slot(kIsBinaryUnknown) = f.unknown_binary || f.binary.empty();
    slot(kIsEmptyFrame) = f.binary.empty() && f.name_space.empty() && f.method.empty();
  }
  return out;
}

std::vector<FeaturizedStack> Featurizer::transform(const Corpus& corpus) const {
  std::vector<FeaturizedStack> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records) out.push_back(transform(r));
  return out;
}

std::vector<std::string> Featurizer::feature_names() const {
  std::vector<std::string> names;
  names.reserve(dimension());
  auto block = [&](const TfIdfVocab& v, const char* prefix) {
    for (std::size_t i = 0; i < options_.dimension; ++i)
      names.push_back(std::string(prefix) + " " +
                      (i < v.tokens.size() ? v.tokens[i] : "<unused " + std::to_string(i) + ">"));
  };
  block(namespace_, "namespace");
  block(method_, "method");
  for (std::size_t s = 0; s < kEngineeredFeatures; ++s) names.emplace_back(kEngineeredNames[s]);
  return names;
}

FeaturizedStack featurize_stack(const CrashRecord& record, const Featurizer& featurizer,
                                std::string_view app_name) {
  return featurizer.transform(record, app_name);
}

}  // namespace crashloc
