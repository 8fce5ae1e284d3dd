#pragma once

// The `crashloc` command line: generate, analyze, train, eval, predict,
// finetune and curve.

#include <iosfwd>
#include <string>
#include <vector>

#include "crashloc/featurizer.hpp"
#include "crashloc/nn.hpp"

namespace crashloc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Directory used for outputs when --out is omitted.
inline constexpr const char* kOutDirEnv = "CRASHLOC_OUT_DIR";

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies a single-map training config ({"hidden":32,"max_epochs":5,...}) on top
/// of `config` and `options`. Keys are the TrainConfig field names plus
/// "tfidf_dimension" and "app_match". Throws DataError on unknown keys or bad values.
void apply_train_config_text(const std::string& text, TrainConfig& config, FeaturizerOptions& options);

/// "f1;f2;..." split into frame texts; empty pieces are dropped.
std::vector<std::string> split_stack_argument(const std::string& text);

}  // namespace crashloc
