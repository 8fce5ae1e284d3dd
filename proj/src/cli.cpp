#include "crashloc/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "crashloc/eval.hpp"
#include "crashloc/generator.hpp"
#include "crashloc/models.hpp"
#include "crashloc/stats.hpp"

namespace crashloc {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_regular_file(path)) throw DataError(std::string(flag) + ": no such file '" + path + "'");
}

fs::path resolve_out(const std::string& value, const char* default_name) {
  if (!value.empty()) return value;
  if (const char* dir = std::getenv(kOutDirEnv); dir && *dir) return fs::path(dir) / default_name;
  throw UsageError(std::string("--out is required (or set ") + kOutDirEnv + ")");
}

void check_out_parent(const fs::path& out) {
  const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (!fs::is_directory(parent)) throw DataError("cannot create output directory " + parent.string());
}

// Runs `write` into a sibling staging directory and moves it into place.
template <class F>
void publish_dir(const fs::path& dir, F&& write) {
  check_out_parent(dir);
  fs::path stage = dir;
  stage += ".partial";
  fs::remove_all(stage);
  try {
    write(stage);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage, ec);
    throw;
  }
  fs::remove_all(dir);
  fs::rename(stage, dir);
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string piece;
  while (std::getline(in, piece, ',')) {
    if (piece.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(piece, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != piece.size() || piece[0] == '-') throw UsageError("--ks: '" + piece + "' is not a sample count");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("--ks: empty list");
  return out;
}

AppMatch parse_app_match(const std::string& s) {
  if (s == "prefix") return AppMatch::kBaseNamePrefix;
  if (s == "exact") return AppMatch::kExact;
  if (s == "substring") return AppMatch::kSubstring;
  throw DataError("app_match must be prefix, exact or substring");
}

// Training flags shared by train, finetune and curve.
struct TrainFlags {
  std::string config_file;
  std::optional<std::size_t> hidden, epochs, batch, patience, dim;
  std::optional<double> lr, dropout, lambda, valid_fraction;
  std::string app_match;
  bool unconstrained = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--train-config", config_file, "Training config file (single map of overrides)");
    cmd->add_option("--hidden", hidden, "LSTM hidden size per direction");
    cmd->add_option("--epochs", epochs, "Maximum epochs");
    cmd->add_option("--batch", batch, "Batch size");
    cmd->add_option("--patience", patience, "Early-stopping patience");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--dropout", dropout, "Dropout rate");
    cmd->add_option("--lambda", lambda, "Problem-class loss weight");
    cmd->add_option("--valid-fraction", valid_fraction, "Validation fraction when --valid is absent");
    cmd->add_option("--dim", dim, "Tf-idf dimension per field");
    cmd->add_option("--app-match", app_match, "App-name rule: prefix, exact or substring");
    cmd->add_flag("--unconstrained", unconstrained, "Plain Viterbi decoding with marginal fallback");
  }

  void apply(TrainConfig& c, FeaturizerOptions& o, std::uint64_t seed) const {
    if (!config_file.empty()) {
      require_file(config_file, "--train-config");
      apply_train_config_text(read_text(config_file), c, o);
    }
    if (hidden) c.hidden = *hidden;
    if (epochs) c.max_epochs = *epochs;
    if (batch) c.batch_size = *batch;
    if (patience) c.patience = *patience;
    if (lr) c.learning_rate = *lr;
    if (dropout) c.dropout = *dropout;
    if (lambda) c.lambda = *lambda;
    if (valid_fraction) c.validation_fraction = *valid_fraction;
    if (dim) o.dimension = *dim;
    if (!app_match.empty()) o.app_match = parse_app_match(app_match);
    if (unconstrained) c.unconstrained_decode = true;
    c.seed = seed;
    c.validate();
  }
};

// Training part and validation part; the validation part is the latest records.
std::pair<Corpus, Corpus> train_valid(const Corpus& train, const std::string& valid_path, double fraction) {
  if (!valid_path.empty()) return {train, load_corpus(valid_path)};
  return temporal_split(train, 1.0 - fraction);
}

std::string alpha_text(const std::vector<double>& alpha) {
  std::string s;
  char buf[32];
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.4f", i ? "," : "", alpha[i]);
    s += buf;
  }
  return s;
}

std::string base_name(const std::string& binary) {
  std::string b = fs::path(binary).filename().string();
  if (const auto slash = b.find_last_of('\\'); slash != std::string::npos) b = b.substr(slash + 1);
  if (const auto dot = b.rfind('.'); dot != std::string::npos && dot > 0) b = b.substr(0, dot);
  for (auto& ch : b) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return b;
}

}  // namespace

std::vector<std::string> split_stack_argument(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string piece;
  while (std::getline(in, piece, ';')) {
    const auto b = piece.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = piece.find_last_not_of(" \t\r");
    out.push_back(piece.substr(b, e - b + 1));
  }
  return out;
}

void apply_train_config_text(const std::string& text, TrainConfig& c, FeaturizerOptions& o) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("malformed training config: ") + e.what());
  }
  if (!j.is_object()) throw DataError("training config must be a map");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "learning_rate") c.learning_rate = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (k == "patience") c.patience = v.get<std::size_t>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "hidden") c.hidden = v.get<std::size_t>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "validation_fraction") c.validation_fraction = v.get<double>();
      else if (k == "lambda") c.lambda = v.get<double>();
      else if (k == "finetune_lr_scale") c.finetune_lr_scale = v.get<double>();
      else if (k == "logreg_learning_rate") c.logreg_learning_rate = v.get<double>();
      else if (k == "unconstrained_decode") c.unconstrained_decode = v.get<bool>();
      else if (k == "tfidf_dimension") o.dimension = v.get<std::size_t>();
      else if (k == "app_match") o.app_match = parse_app_match(v.get<std::string>());
      else throw DataError("unknown training config field '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad training config value: ") + e.what());
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Crash localization: find the blamed frame in a crash stack."};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "Seed for every random choice")->default_val(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic labeled corpus");
  std::string gen_config, gen_out;
  std::optional<std::size_t> gen_records;
  gen->add_option("--config", gen_config, "Generator config file (single map)");
  gen->add_option("--records", gen_records, "Override the record count");
  gen->add_option("--out", gen_out, "Output corpus file");

  // analyze
  auto* ana = app.add_subcommand("analyze", "Corpus statistics as CSV files");
  std::string ana_corpus, ana_out;
  ana->add_option("--corpus", ana_corpus, "Corpus file")->required();
  ana->add_option("--out", ana_out, "Output directory");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string tr_kind, tr_train, tr_valid, tr_out;
  TrainFlags tr_flags;
  tr->add_option("--kind", tr_kind, "top, second, most_freq, logreg, bilstm_crf_attn or deepanalyze")->required();
  tr->add_option("--train", tr_train, "Training corpus")->required();
  tr->add_option("--valid", tr_valid, "Validation corpus (default: latest records of --train)");
  tr->add_option("--out", tr_out, "Output model file");
  tr_flags.add(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model on a labeled corpus");
  std::string ev_model, ev_test, ev_out;
  ev->add_option("--model", ev_model, "Model file")->required();
  ev->add_option("--test", ev_test, "Test corpus")->required();
  ev->add_option("--out", ev_out, "Report directory");

  // predict
  auto* pr = app.add_subcommand("predict", "Localize the blamed frame of one stack");
  std::string pr_model, pr_stack, pr_stack_file, pr_app;
  pr->add_option("--model", pr_model, "Model file")->required();
  auto* stack_opt = pr->add_option("--stack", pr_stack, "Frames separated by ';', top first");
  auto* file_opt = pr->add_option("--stack-file", pr_stack_file, "File with one frame per line, top first");
  stack_opt->excludes(file_opt);
  pr->add_option("--app", pr_app, "Application name (default: base name of the bottom frame's binary)");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Adapt a model to a target application");
  std::string ft_model, ft_train, ft_valid, ft_out;
  std::size_t ft_k = 0;
  TrainFlags ft_flags;
  ft->add_option("--model", ft_model, "Global model file")->required();
  ft->add_option("--train", ft_train, "Target corpus")->required();
  ft->add_option("--k", ft_k, "Number of target records to sample")->required();
  ft->add_option("--valid", ft_valid, "Target validation corpus (default: latest records of --train)");
  ft->add_option("--out", ft_out, "Output model file");
  ft_flags.add(ft);

  // curve
  auto* cu = app.add_subcommand("curve", "Fine-tuning vs training from scratch over sample counts");
  std::string cu_model, cu_target, cu_ks, cu_out;
  TrainFlags cu_flags;
  cu->add_option("--model", cu_model, "Global model file")->required();
  cu->add_option("--target", cu_target, "Target application corpus")->required();
  cu->add_option("--ks", cu_ks, "Comma-separated sample counts")->default_val("0,100,500,1000,2000,5000");
  cu->add_option("--out", cu_out, "Output CSV file");
  cu_flags.add(cu);

  std::vector<const char*> argv = {"crashloc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) {
      GeneratorConfig cfg = default_generator_config();
      if (!gen_config.empty()) {
        require_file(gen_config, "--config");
        cfg = generator_config_from_text(read_text(gen_config));
      }
      if (gen_records) cfg.record_count = *gen_records;
      cfg.seed = seed;
      cfg.validate();
      const fs::path dest = resolve_out(gen_out, "corpus.jsonl");
      check_out_parent(dest);
      const Corpus c = generate_synthetic(cfg);
      save_corpus(c, dest);
      out << "wrote " << c.size() << " records to " << dest.string() << "\n";
    } else if (*ana) {
      require_file(ana_corpus, "--corpus");
      const fs::path dest = resolve_out(ana_out, "stats");
      const Corpus c = load_corpus(ana_corpus);
      const CorpusStats s = compute_stats(c);
      publish_dir(dest, [&](const fs::path& d) { write_stats_csv(s, d); });
      out << "records: " << c.size() << "\n"
          << "median depth: " << s.depth.median << "\n"
          << "mean depth: " << s.depth.mean << "\n"
          << "mean distinct binaries: " << s.binaries.mean << "\n"
          << "top-frame blame share: " << s.top_frame_blame_share << "\n"
          << "memory-related share: " << s.classes.memory_related_share << "\n"
          << "wrote " << dest.string() << "\n";
    } else if (*tr) {
      const ModelKind kind = parse_model_kind(tr_kind);
      require_file(tr_train, "--train");
      if (!tr_valid.empty()) require_file(tr_valid, "--valid");
      const fs::path dest = resolve_out(tr_out, "model.bin");
      check_out_parent(dest);
      TrainConfig cfg;
      FeaturizerOptions opts;
      tr_flags.apply(cfg, opts, seed);
      const Corpus all = load_corpus(tr_train);
      const auto [train, valid] = train_valid(all, tr_valid, cfg.validation_fraction);
      const ModelBundle b = train_model(kind, train, valid, cfg, opts);
      save_model(b, dest);
      out << "trained " << model_kind_name(kind) << " on " << train.size() << " records";
      if (!b.history.empty())
        out << " (" << b.history.size() << " epochs, best " << b.best_epoch
            << ", validation accuracy " << b.history[b.best_epoch - 1].valid_accuracy << ")";
      out << "\nwrote " << dest.string() << "\n";
    } else if (*ev) {
      require_file(ev_model, "--model");
      require_file(ev_test, "--test");
      const fs::path dest = resolve_out(ev_out, "report");
      const ModelBundle b = load_model(ev_model);
      const EvalReport r = evaluate(b, load_corpus(ev_test));
      publish_dir(dest, [&](const fs::path& d) { write_report(r, d); });
      out << report_summary_text(r) << "wrote " << dest.string() << "\n";
    } else if (*pr) {
      require_file(pr_model, "--model");
      std::vector<std::string> frames;
      if (!pr_stack_file.empty()) {
        require_file(pr_stack_file, "--stack-file");
        std::istringstream in(read_text(pr_stack_file));
        std::string line;
        while (std::getline(in, line)) {
          const auto b = line.find_first_not_of(" \t\r");
          if (b == std::string::npos) continue;
          frames.push_back(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
        }
      } else if (!pr_stack.empty()) {
        frames = split_stack_argument(pr_stack);
      } else {
        throw UsageError("predict needs --stack or --stack-file");
      }
      if (frames.empty()) throw DataError("the stack has no frames");
      CrashRecord rec;
      for (const auto& f : frames) rec.stack.push_back(parse_frame(f));
      rec.app = pr_app.empty() ? base_name(rec.stack.back().binary) : pr_app;
      validate_record(rec);
      const ModelBundle b = load_model(pr_model);
      const BlamePrediction p = predict_blame(b, rec);
      out << "index: " << p.index << "\n";
      out << "frame: " << rec.stack[p.index].raw << "\n";
      out << "app: " << rec.app << "\n";
      if (!p.alpha.empty()) out << "alpha: " << alpha_text(p.alpha) << "\n";
      if (p.fallback) out << "fallback: marginal argmax\n";
      if (b.has_class_head()) {
        const ClassPrediction c = predict_problem_class(b, rec);
        const auto idx = static_cast<std::size_t>(
            std::find(b.classes.begin(), b.classes.end(), c.problem_class) - b.classes.begin());
        out << "problem_class: " << c.problem_class << " (p=" << c.probabilities[idx] << ")\n";
      }
    } else if (*ft) {
      require_file(ft_model, "--model");
      require_file(ft_train, "--train");
      if (!ft_valid.empty()) require_file(ft_valid, "--valid");
      const fs::path dest = resolve_out(ft_out, "model_finetuned.bin");
      check_out_parent(dest);
      const ModelBundle global = load_model(ft_model);
      TrainConfig cfg = global.config;
      FeaturizerOptions opts = global.featurizer.options();
      ft_flags.apply(cfg, opts, seed);
      const Corpus target = load_corpus(ft_train);
      const auto [pool, valid] = train_valid(target, ft_valid, cfg.validation_fraction);
      const Corpus sample = curve_sample(pool, ft_k, cfg.seed);
      const ModelBundle tuned = fine_tune(global, sample, valid, cfg);
      save_model(tuned, dest);
      out << "fine-tuned " << model_kind_name(tuned.kind) << " on " << sample.size() << " target records\n"
          << "wrote " << dest.string() << "\n";
    } else if (*cu) {
      require_file(cu_model, "--model");
      require_file(cu_target, "--target");
      const auto ks = parse_k_list(cu_ks);
      const fs::path dest = resolve_out(cu_out, "curve.csv");
      check_out_parent(dest);
      const ModelBundle global = load_model(cu_model);
      TrainConfig cfg = global.config;
      FeaturizerOptions opts = global.featurizer.options();
      cu_flags.apply(cfg, opts, seed);
      const auto [target_train, target_test] = temporal_split(load_corpus(cu_target));
      const auto [pool, valid] = temporal_split(target_train, 1.0 - cfg.validation_fraction);
      const auto curve = learning_curve(global, pool, valid, target_test, ks, cfg);
      const std::string csv = curve_csv(curve);
      write_file_atomic(dest, csv);
      out << csv << "wrote " << dest.string() << "\n";
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace crashloc
