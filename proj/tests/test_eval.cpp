#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "crashloc/eval.hpp"
#include "crashloc/generator.hpp"
#include "fixtures.hpp"

using namespace crashloc;
using fixtures::make_record;

namespace {

using Idx = std::vector<std::size_t>;

Corpus generated(std::size_t n, std::uint64_t seed, std::vector<std::string> apps = {}) {
  auto cfg = default_generator_config();
  cfg.record_count = n;
  cfg.seed = seed;
  if (!apps.empty()) {
    cfg.apps.clear();
    for (const auto& a : apps) cfg.apps.push_back(builtin_app(a));
  }
  return generate_synthetic(cfg);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.hidden = 4;
  c.max_epochs = 2;
  c.patience = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Accuracy, Basic) {
  EXPECT_DOUBLE_EQ(accuracy({0, 1, 2, 3}, {0, 1, 0, 0}), 0.5);
  EXPECT_DOUBLE_EQ(accuracy({4, 4}, {4, 4}), 1.0);
  EXPECT_THROW(accuracy({0}, {0, 1}), std::invalid_argument);
  EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
}

TEST(Accuracy, TwentyRecordHandCount) {
  const Idx truth = {0, 1, 2, 0, 0, 3, 1, 0, 0, 2, 0, 0, 1, 0, 4, 0, 0, 2, 0, 1};
  const Idx pred = {0, 0, 2, 0, 1, 3, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 2, 0, 0};
  // Mismatches at positions 1, 4, 9, 14, 19.
  EXPECT_DOUBLE_EQ(accuracy(pred, truth), 15.0 / 20.0);
}

TEST(PerClass, Rows) {
  const auto one = per_class_accuracy({0, 1, 0}, {0, 0, 0}, {"A", "A", "A"});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one[0].accuracy(), accuracy({0, 1, 0}, {0, 0, 0}));
  const auto two = per_class_accuracy({0, 0, 1, 1}, {0, 0, 0, 0}, {"B", "B", "A", "A"});
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].problem_class, "A");
  EXPECT_DOUBLE_EQ(two[0].accuracy(), 0.0);
  EXPECT_DOUBLE_EQ(two[1].accuracy(), 1.0);
  EXPECT_THROW(per_class_accuracy({0}, {0}, {}), std::invalid_argument);
}

TEST(PerClass, WeightedMeanIsOverall) {
  Rng rng(1);
  Idx p, t;
  std::vector<std::string> c;
  for (int i = 0; i < 500; ++i) {
    t.push_back(rng.below(3));
    p.push_back(rng.below(3));
    c.push_back(std::string(1, static_cast<char>('A' + rng.below(5))));
  }
  double weighted = 0.0;
  std::size_t total = 0;
  for (const auto& r : per_class_accuracy(p, t, c)) {
    weighted += r.accuracy() * static_cast<double>(r.records);
    total += r.records;
  }
  EXPECT_EQ(total, 500u);
  EXPECT_NEAR(weighted / 500.0, accuracy(p, t), 1e-12);
}

TEST(Improvement, Values) {
  EXPECT_NEAR(improvement_pct(0.90, 0.77), 15.57, 0.01);
  EXPECT_DOUBLE_EQ(improvement_pct(0.8, 0.8), 0.0);
  EXPECT_DOUBLE_EQ(improvement_pct(0.6, 0.9), improvement_pct(0.9, 0.6));
  EXPECT_GT(improvement_pct(0.6, 0.61), 0.0);
  EXPECT_THROW(improvement_pct(0.0, 0.0), std::invalid_argument);
}

TEST(FeatureImportance, LogRegNormalization) {
  ModelBundle b;
  b.kind = ModelKind::kLogReg;
  Corpus c;
  c.records = {make_record({"a!b"}, 0)};
  b.featurizer = Featurizer::fit(c, {1, AppMatch::kBaseNamePrefix});
  const std::size_t d = b.featurizer.dimension();
  b.logreg.w = Tensor({d});
  b.logreg.w[0] = 2.0;
  b.logreg.w[1] = -1.0;
  const auto r = feature_importance(b);
  ASSERT_EQ(r.ranked.size(), d);
  const auto names = b.featurizer.feature_names();
  EXPECT_EQ(r.ranked.front().first, names[0]);
  EXPECT_DOUBLE_EQ(r.ranked.front().second, 1.0);
  EXPECT_EQ(r.ranked.back().first, names[1]);
  EXPECT_DOUBLE_EQ(r.ranked.back().second, -0.5);
  const std::string csv = feature_importance_csv(r);
  EXPECT_NE(csv.find("max |value| = 1"), std::string::npos);
}

TEST(FeatureImportance, Errors) {
  ModelBundle top;
  EXPECT_THROW(feature_importance(top), std::invalid_argument);
  ModelBundle lr;
  lr.kind = ModelKind::kLogReg;
  EXPECT_THROW(feature_importance(lr), std::invalid_argument);
}

TEST(FeatureImportance, SequenceModelMaxAbsIsOne) {
  const Corpus c = generated(200, 2);
  Corpus valid;
  valid.records.assign(c.records.begin(), c.records.begin() + 40);
  const auto b = train_model(ModelKind::kDeepAnalyze, c, valid, tiny_config());
  for (bool all : {false, true}) {
    const auto r = feature_importance(b, all);
    double m = 0.0;
    for (const auto& [name, v] : r.ranked) m = std::max(m, std::abs(v));
    EXPECT_DOUBLE_EQ(m, 1.0);
    for (std::size_t i = 1; i < r.ranked.size(); ++i) EXPECT_GE(r.ranked[i - 1].second, r.ranked[i].second);
  }
}

class ReportTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const Corpus all = generated(400, 4);
    auto [train, test] = temporal_split(all, 0.75);
    train_ = train;
    test_ = test;
  }
  Corpus train_, test_;
};

TEST_F(ReportTest, ReportInvariantsAndLog) {
  const auto b = train_model(ModelKind::kMostFreq, train_, test_, tiny_config());
  const auto r = evaluate(b, test_);
  EXPECT_EQ(r.records, test_.size());
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
  std::size_t n = 0;
  for (const auto& c : r.per_class) n += c.records;
  EXPECT_EQ(n, test_.size());
  std::size_t h = 0;
  for (const auto& [k, v] : r.offset_histogram) h += v;
  EXPECT_EQ(h, test_.size());
  EXPECT_DOUBLE_EQ(accuracy_from_log(r.log_text()), r.accuracy);
  EXPECT_EQ(r.test_digest, corpus_digest(test_));
  EXPECT_EQ(r.train_digest, corpus_digest(train_));
}

TEST_F(ReportTest, SequenceLogCarriesAlpha) {
  const auto b = train_model(ModelKind::kBiLstmCrfAttn, train_, test_, tiny_config());
  const auto r = evaluate(b, test_);
  std::istringstream in(r.log_text());
  std::string line;
  std::getline(in, line);
  std::size_t tabs = 0, semis = 0;
  for (char ch : line) {
    tabs += ch == '\t';
    semis += ch == ';';
  }
  EXPECT_EQ(tabs, 3u);
  EXPECT_EQ(semis + 1, test_.records[0].depth());
  EXPECT_DOUBLE_EQ(accuracy_from_log(r.log_text()), r.accuracy);
}

TEST_F(ReportTest, WriteReportFiles) {
  const auto b = train_model(ModelKind::kTopFrame, train_, test_, tiny_config());
  const auto r = evaluate(b, test_);
  const auto dir = std::filesystem::temp_directory_path() / "crashloc_tests" / "report";
  std::filesystem::remove_all(dir);
  write_report(r, dir);
  for (const char* f : {"report.csv", "per_class.csv", "offsets.csv", "predictions.log", "summary.txt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream in(dir / "summary.txt");
  std::stringstream s;
  s << in.rdbuf();
  EXPECT_NE(s.str().find("prediction log digest: " + hex64(r.log_digest())), std::string::npos);
  EXPECT_NE(s.str().find("model_kind = top"), std::string::npos);
}

TEST_F(ReportTest, Errors) {
  const auto b = train_model(ModelKind::kTopFrame, train_, test_, tiny_config());
  EXPECT_THROW(evaluate(b, Corpus{}), DataError);
  Corpus unlabeled = test_;
  unlabeled.records[0].blame_index.reset();
  EXPECT_THROW(evaluate(b, unlabeled), DataError);
  EXPECT_THROW(accuracy_from_log(""), DataError);
  EXPECT_THROW(accuracy_from_log("zz\tnot\tnumbers\n"), DataError);
}

TEST(LearningCurve, ShapeAndKZero) {
  const Corpus source = generated(300, 5, {"msedge", "excel", "winword"});
  const Corpus target = generated(300, 6, {"outlook"});
  auto [src_train, src_valid] = temporal_split(source, 0.85);
  auto [t_train, t_test] = temporal_split(target, 0.7);
  auto [pool, valid] = temporal_split(t_train, 0.8);
  const auto global = train_model(ModelKind::kLogReg, src_train, src_valid, tiny_config());
  const std::vector<std::size_t> ks = {0, 20, 60};
  const auto curve = learning_curve(global, pool, valid, t_test, ks, tiny_config());
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_DOUBLE_EQ(curve[0].finetune_accuracy, evaluate(global, t_test).accuracy);
  ModelBundle top;
  EXPECT_DOUBLE_EQ(curve[0].scratch_accuracy, evaluate(top, t_test).accuracy);
  const std::string csv = curve_csv(curve);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "K,finetune_acc,scratch_acc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_THROW(learning_curve(global, pool, valid, t_test, {pool.size() + 1}, tiny_config()), std::invalid_argument);
}

TEST(LearningCurve, SampleIsSeededPrefix) {
  const Corpus c = generated(50, 7);
  const auto a = curve_sample(c, 10, 1);
  const auto b = curve_sample(c, 20, 1);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(a.records[i], b.records[i]);
  EXPECT_NE(corpus_digest(curve_sample(c, 10, 2)), corpus_digest(a));
  EXPECT_EQ(curve_sample(c, 0, 1).size(), 0u);
}

TEST(DefaultKs, Values) { EXPECT_EQ(default_k_list(), (std::vector<std::size_t>{0, 100, 500, 1000, 2000, 5000})); }
