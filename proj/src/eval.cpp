#include "crashloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "crashloc/stats.hpp"

namespace crashloc {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double bundle_accuracy(const ModelBundle& b, const Corpus& test) { return evaluate(b, test).accuracy; }

}  // namespace

double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truths) {
  if (predictions.size() != truths.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("accuracy: no predictions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hit += predictions[i] == truths[i];
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

std::vector<ClassAccuracy> per_class_accuracy(const std::vector<std::size_t>& predictions,
                                              const std::vector<std::size_t>& truths,
                                              const std::vector<std::string>& classes) {
  if (predictions.size() != truths.size() || classes.size() != truths.size())
    throw std::invalid_argument("per_class_accuracy: length mismatch");
  std::map<std::string, ClassAccuracy> rows;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    auto& r = rows[classes[i]];
    r.problem_class = classes[i];
    ++r.records;
    r.correct += predictions[i] == truths[i];
  }
  std::vector<ClassAccuracy> out;
  for (auto& [k, v] : rows) out.push_back(v);
  return out;
}

double improvement_pct(double a1, double a2) {
  const double avg = 0.5 * (a1 + a2);
  if (avg == 0.0) throw std::invalid_argument("improvement_pct: both accuracies are zero");
  return std::abs(a1 - a2) / avg * 100.0;
}

FeatureImportanceReport feature_importance(const ModelBundle& bundle, bool all_gates) {
  Eigen::VectorXd w;
  if (bundle.kind == ModelKind::kLogReg) {
    if (bundle.logreg.w.empty()) throw std::invalid_argument("feature_importance: logistic regression is unfitted");
    w = bundle.logreg.w.vec();
  } else if (is_sequence_model(bundle.kind)) {
    if (bundle.seq.fwd.wx.empty()) throw std::invalid_argument("feature_importance: sequence model is unfitted");
    const auto H = static_cast<Eigen::Index>(bundle.seq.hidden());
    const Eigen::Index first = all_gates ? 0 : 3 * H;
    const Eigen::Index rows = all_gates ? 4 * H : H;
    w = bundle.seq.fwd.wx.mat().middleRows(first, rows).colwise().sum().transpose() +
        bundle.seq.bwd.wx.mat().middleRows(first, rows).colwise().sum().transpose();
  } else {
    throw std::invalid_argument("feature_importance needs a logreg or sequence model");
  }
  const auto names = bundle.featurizer.feature_names();
  if (static_cast<std::size_t>(w.size()) != names.size())
    throw std::invalid_argument("feature_importance: weights do not match the vocabulary");
  const double m = w.cwiseAbs().maxCoeff();
  if (m > 0.0) w /= m;
  FeatureImportanceReport r;
  for (std::size_t i = 0; i < names.size(); ++i) r.ranked.emplace_back(names[i], w[static_cast<Eigen::Index>(i)]);
  std::stable_sort(r.ranked.begin(), r.ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return r;
}

std::string EvalReport::log_text() const {
  std::string out;
  for (const auto& e : log) {
    out += hex64(e.record_hash);
    out += '\t' + std::to_string(e.truth) + '\t' + std::to_string(e.predicted) + '\t';
    for (std::size_t i = 0; i < e.alpha.size(); ++i) {
      if (i) out += ';';
      out += fmt(e.alpha[i]);
    }
    out += '\n';
  }
  return out;
}

std::uint64_t EvalReport::log_digest() const { return fnv1a(log_text()); }

std::vector<std::pair<std::string, std::string>> config_echo(const ModelBundle& b) {
  const TrainConfig& c = b.config;
  std::vector<std::pair<std::string, std::string>> out = {
      {"model_kind", model_kind_name(b.kind)},
      {"learning_rate", fmt_g(c.learning_rate)},
      {"batch_size", std::to_string(c.batch_size)},
      {"max_epochs", std::to_string(c.max_epochs)},
      {"patience", std::to_string(c.patience)},
      {"dropout", fmt_g(c.dropout)},
      {"hidden", std::to_string(c.hidden)},
      {"seed", std::to_string(c.seed)},
      {"validation_fraction", fmt_g(c.validation_fraction)},
      {"lambda", fmt_g(c.lambda)},
      {"finetune_lr_scale", fmt_g(c.finetune_lr_scale)},
      {"logreg_learning_rate", fmt_g(c.logreg_learning_rate)},
      {"decode", c.unconstrained_decode ? "viterbi" : "constrained"},
      {"optimizer", "adam(beta1=0.9,beta2=0.999,eps=1e-8)"},
      {"tfidf_dimension", std::to_string(b.featurizer.options().dimension)},
      {"epochs_run", std::to_string(b.history.size())},
      {"best_epoch", std::to_string(b.best_epoch)},
  };
  return out;
}

EvalReport evaluate(const ModelBundle& bundle, const Corpus& test) {
  if (test.empty()) throw DataError("test corpus is empty");
  EvalReport r;
  r.model_kind = model_kind_name(bundle.kind);
  r.records = test.size();
  r.config = config_echo(bundle);
  r.train_digest = bundle.train_digest;
  r.test_digest = corpus_digest(test);
  std::vector<std::size_t> pred, truth;
  std::vector<std::string> classes;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const CrashRecord& rec = test.records[i];
    if (!rec.blame_index) throw DataError("test record " + std::to_string(i) + " has no blame label");
    BlamePrediction p = predict_blame(bundle, rec);
    pred.push_back(p.index);
    truth.push_back(*rec.blame_index);
    classes.push_back(rec.problem_class);
    ++r.offset_histogram[static_cast<long>(p.index) - static_cast<long>(*rec.blame_index)];
    r.log.push_back({record_hash(rec), *rec.blame_index, p.index, std::move(p.alpha)});
  }
  r.accuracy = accuracy(pred, truth);
  r.per_class = per_class_accuracy(pred, truth, classes);
  return r;
}

std::string report_summary_text(const EvalReport& r) {
  std::ostringstream o;
  o << "model: " << r.model_kind << '\n';
  o << "records: " << r.records << '\n';
  o << "accuracy: " << fmt(r.accuracy) << '\n';
  o << "train corpus digest: " << hex64(r.train_digest) << '\n';
  o << "test corpus digest: " << hex64(r.test_digest) << '\n';
  o << "prediction log digest: " << hex64(r.log_digest()) << '\n';
  o << "\nper problem class:\n";
  for (const auto& c : r.per_class)
    o << "  " << c.problem_class << ": " << fmt(c.accuracy()) << " (" << c.correct << "/" << c.records << ")\n";
  o << "\nblame offset (predicted - true):\n";
  for (const auto& [off, n] : r.offset_histogram) o << "  " << off << ": " << n << '\n';
  o << "\nconfiguration:\n";
  for (const auto& [k, v] : r.config) o << "  " << k << " = " << v << '\n';
  return o.str();
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream o;
    o << "metric,value\n";
    o << "model_kind," << r.model_kind << '\n';
    o << "records," << r.records << '\n';
    o << "accuracy," << fmt(r.accuracy) << '\n';
    o << "train_digest," << hex64(r.train_digest) << '\n';
    o << "test_digest," << hex64(r.test_digest) << '\n';
    o << "prediction_log_digest," << hex64(r.log_digest()) << '\n';
    for (const auto& [k, v] : r.config) o << "config." << csv_field(k) << ',' << csv_field(v) << '\n';
    write_file_atomic(dir / "report.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "problem_class,records,correct,accuracy\n";
    for (const auto& c : r.per_class)
      o << csv_field(c.problem_class) << ',' << c.records << ',' << c.correct << ',' << fmt(c.accuracy()) << '\n';
    write_file_atomic(dir / "per_class.csv", o.str());
  }
  {
    std::ostringstream o;
    o << "offset,count\n";
    for (const auto& [off, n] : r.offset_histogram) o << off << ',' << n << '\n';
    write_file_atomic(dir / "offsets.csv", o.str());
  }
  write_file_atomic(dir / "predictions.log", r.log_text());
  write_file_atomic(dir / "summary.txt", report_summary_text(r));
}

double accuracy_from_log(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0, hit = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string hash;
    std::size_t truth = 0, pred = 0;
    if (!(fields >> hash >> truth >> pred)) throw DataError("malformed prediction log line " + std::to_string(n + 1));
    ++n;
    hit += truth == pred;
  }
  if (n == 0) throw DataError("empty prediction log");
  return static_cast<double>(hit) / static_cast<double>(n);
}

Corpus curve_sample(const Corpus& pool, std::size_t k, std::uint64_t seed) {
  if (k > pool.size())
    throw std::invalid_argument("K = " + std::to_string(k) + " exceeds the available records (" +
                                std::to_string(pool.size()) + ")");
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xc0ffee));
  rng.shuffle(order);
  Corpus out;
  out.source = pool.source;
  for (std::size_t i = 0; i < k; ++i) out.records.push_back(pool.records[order[i]]);
  return out;
}

std::vector<CurvePoint> learning_curve(const ModelBundle& global, const Corpus& target_train,
                                       const Corpus& target_valid, const Corpus& target_test,
                                       const std::vector<std::size_t>& k_list, const TrainConfig& config) {
  for (std::size_t k : k_list)
    if (k > target_train.size())
      throw std::invalid_argument("K = " + std::to_string(k) + " exceeds the target training corpus (" +
                                  std::to_string(target_train.size()) + " records)");
  ModelBundle top;
  top.kind = ModelKind::kTopFrame;
  std::vector<CurvePoint> out;
  for (std::size_t k : k_list) {
    CurvePoint p;
    p.k = k;
    if (k == 0) {
      p.finetune_accuracy = bundle_accuracy(global, target_test);
      p.scratch_accuracy = bundle_accuracy(top, target_test);
    } else {
      const Corpus sample = curve_sample(target_train, k, config.seed);
      p.finetune_accuracy = bundle_accuracy(fine_tune(global, sample, target_valid, config), target_test);
      TrainConfig scratch = config;
      scratch.hidden = global.config.hidden;
      const ModelBundle local =
          train_model(global.kind, sample, target_valid, scratch, global.featurizer.options());
      p.scratch_accuracy = bundle_accuracy(local, target_test);
    }
    out.push_back(p);
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "K,finetune_acc,scratch_acc\n";
  for (const auto& p : curve)
    out += std::to_string(p.k) + "," + fmt(p.finetune_accuracy) + "," + fmt(p.scratch_accuracy) + "\n";
  return out;
}

std::string feature_importance_csv(const FeatureImportanceReport& report) {
  std::string out = "# importances normalized to max |value| = 1\nfeature,importance\n";
  for (const auto& [name, v] : report.ranked) out += csv_field(name) + "," + fmt(v) + "\n";
  return out;
}

}  // namespace crashloc
