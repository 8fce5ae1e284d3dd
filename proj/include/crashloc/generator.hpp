#pragma once

// Seeded synthetic crash-corpus generator. Stacks are assembled from frame pools
// (application code, drivers, system, standard library, logging/exception
// wrappers) and labeled by a context-dependent blame rule that is never exposed
// as a feature.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crashloc/corpus.hpp"

namespace crashloc {

enum class Pool : int { kApp = 0, kDriver, kSystem, kStdLib, kWrapper };
inline constexpr std::size_t kPoolCount = 5;
const char* pool_name(Pool p);

inline const std::vector<std::string>& default_problem_classes() {
  static const std::vector<std::string> classes = {
      "INVALID_POINTER_READ", "NULL_POINTER_READ", "APPLICATION_FAULT",
      "STACK_OVERFLOW",       "CPP_EXCEPTION",     "HEAP_CORRUPTION"};
  return classes;
}

struct AppProfile {
  std::string name;
  /// Binaries holding the application's own code; the first is the main module.
  std::vector<std::string> binaries;
  /// Shared application-side libraries (code of the app family, not app-named).
  std::vector<std::string> shared_binaries;
  std::vector<std::string> namespaces;
  std::vector<std::string> methods;
  /// Full frame texts of harmless logging / crash-reporting helpers.
  std::vector<std::string> wrappers;
  std::string entry;  // bottom-of-stack entry frame text
};

struct GeneratorConfig {
  std::vector<AppProfile> apps;
  /// Pool of the crash-site frame for the generic (non-pattern) classes.
  std::array<double, kPoolCount> pool_weights{};
  std::map<std::string, double> class_weights;

  // Depth: discretized log-normal clamped to [1, 255].
  double depth_median = 7.5;
  double depth_sigma = 0.95;
  // Stack-overflow stacks run much deeper.
  double overflow_depth_median = 48.0;
  double overflow_depth_sigma = 0.6;
  /// Probability that a stack-overflow cycle starts at the top frame.
  double overflow_top_prob = 0.8;

  /// Probability that an application blame frame comes from the crash-prone methods.
  double prone_blame_prob = 0.5;
  /// Same, for application frames that are not blamed.
  double prone_other_prob = 0.02;
  /// Probability that the first candidate below a skipped crash-site region is a
  /// driver frame rather than application code.
  double driver_blame_prob = 0.18;
  double offset_prob = 0.25;
  double symbolless_prob = 0.03;

  /// Probability that a generic-class stack whose crash site is application code
  /// starts with a reference-counting helper frame from the app's main binary.
  double helper_frame_prob = 0.3;
  /// Class in which that helper only forwards a bad pointer and is skipped; in
  /// every other class the helper itself is blamed.
  std::string helper_skip_class = "NULL_POINTER_READ";
  /// Probability that a helper_skip_class stack originates on a thread-pool worker
  /// rather than the app's entry point. Other classes use 1 - this.
  double worker_origin_prob = 0.5;
  /// Probability that an application frame's namespace comes from the component
  /// group of its class (worker components for helper_skip_class, UI otherwise).
  double component_bias = 0.8;
  /// Probability that such a namespace is a framework component shared by all apps.
  double shared_component_prob = 0.5;

  std::size_t record_count = 20000;
  std::uint64_t seed = 1;
  std::int64_t start_ts = 1'600'000'000;
  std::int64_t window_seconds = 14 * 86400;
  /// Fraction of records emitted as exact copies of an earlier record (new timestamp).
  double duplicate_fraction = 0.0;

  /// Tokens the generator treats as crash-prone when choosing blamed methods.
  std::vector<std::string> crash_prone_tokens;

  /// Throws std::invalid_argument on negative or non-normalized weights,
  /// record_count == 0, or an empty app catalog.
  void validate() const;
  std::uint64_t digest() const;
};

/// Default catalog: msedge, excel, winword, outlook with the calibrated mixtures.
GeneratorConfig default_generator_config();

/// Catalog entry by app name (throws std::invalid_argument for unknown names).
AppProfile builtin_app(const std::string& name);
std::vector<std::string> builtin_app_names();

/// Parses a single-map config ({"record_count":..,"seed":..,"apps":[names],
/// "class_weights":{..},"pool_weights":{..},...}) on top of the defaults.
GeneratorConfig generator_config_from_text(const std::string& text);
std::string generator_config_to_text(const GeneratorConfig& config);

/// Deterministic in `config`; all records are distinct except the forced duplicates.
Corpus generate_synthetic(const GeneratorConfig& config);

/// Per-record outcome with the generator-side pool labels (for calibration tests).
struct GeneratedRecord {
  CrashRecord record;
  std::vector<Pool> pools;
  /// First index of the repeated cycle (stack overflow only).
  std::optional<std::size_t> cycle_start;
  std::size_t cycle_length = 0;
  bool forced_duplicate = false;
};
std::vector<GeneratedRecord> generate_detailed(const GeneratorConfig& config);

/// The hidden labeling rule, re-derived from pool labels and the problem class.
/// Exposed so tests can check generator labels independently of construction.
std::size_t hidden_blame_rule(const std::vector<Pool>& pools, const std::string& problem_class,
                              std::optional<std::size_t> cycle_start);

}  // namespace crashloc
