#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "crashloc/generator.hpp"
#include "crashloc/models.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace crashloc;
using fixtures::make_record;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.hidden = 4;
  c.max_epochs = 3;
  c.patience = 2;
  c.batch_size = 16;
  c.seed = 5;
  return c;
}

Corpus generated(std::size_t n, std::uint64_t seed) {
  auto cfg = default_generator_config();
  cfg.record_count = n;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

Corpus head(const Corpus& c, std::size_t n) {
  Corpus out;
  out.records.assign(c.records.begin(), c.records.begin() + static_cast<std::ptrdiff_t>(std::min(n, c.size())));
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "crashloc_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ModelKind, Names) {
  for (auto k : {ModelKind::kTopFrame, ModelKind::kSecondFrame, ModelKind::kMostFreq, ModelKind::kLogReg,
                 ModelKind::kBiLstmCrfAttn, ModelKind::kDeepAnalyze})
    EXPECT_EQ(parse_model_kind(model_kind_name(k)), k);
  EXPECT_THROW(parse_model_kind("bogus"), std::invalid_argument);
  EXPECT_TRUE(is_sequence_model(ModelKind::kDeepAnalyze));
  EXPECT_FALSE(is_sequence_model(ModelKind::kLogReg));
  EXPECT_TRUE(needs_features(ModelKind::kLogReg));
  EXPECT_FALSE(needs_features(ModelKind::kMostFreq));
}

TEST(Heuristics, FigureStacks) {
  const auto driver = make_record(fixtures::edge_driver_stack(), 0);
  const auto logging = make_record(fixtures::edge_logging_stack(), 2);
  EXPECT_EQ(predict_heuristic(ModelKind::kTopFrame, driver), *driver.blame_index);
  EXPECT_NE(predict_heuristic(ModelKind::kTopFrame, logging), *logging.blame_index);
  EXPECT_EQ(predict_heuristic(ModelKind::kSecondFrame, logging), 1u);
}

TEST(Heuristics, SecondFrameOnDepthOne) {
  EXPECT_EQ(predict_heuristic(ModelKind::kSecondFrame, make_record({"a!b"}, 0)), 0u);
}

TEST(Heuristics, MostFrequent) {
  const BlameFrequencyTable t = {{"x!A", 3}, {"x!B", 1}};
  EXPECT_EQ(predict_heuristic(ModelKind::kMostFreq, make_record({"x!B", "x!A"}, 0), &t), 1u);
  EXPECT_EQ(predict_heuristic(ModelKind::kMostFreq, make_record({"x!C", "x!D"}, 0), &t), 0u);
  EXPECT_EQ(predict_heuristic(ModelKind::kMostFreq, make_record({"x!C", "x!A", "x!A"}, 0), &t), 1u);
  EXPECT_THROW(predict_heuristic(ModelKind::kMostFreq, make_record({"x!C"}, 0)), std::invalid_argument);
}

TEST(Heuristics, EmptyStackRejected) { EXPECT_THROW(predict_heuristic(ModelKind::kTopFrame, CrashRecord{}), DataError); }

TEST(BlameTable, HandCount) {
  Corpus c;
  c.records.push_back(make_record({"x!A", "x!B"}, 0));
  EXPECT_EQ(fit_blame_table(c), (BlameFrequencyTable{{"x!A", 1}}));
  // 20 records: A blamed 8 times, B 7, C 5; one unlabeled record is ignored.
  c.records.clear();
  for (int i = 0; i < 8; ++i) c.records.push_back(make_record({"x!A", "y!B+0x1" }, 0));
  for (int i = 0; i < 7; ++i) c.records.push_back(make_record({"x!A", "y!B+0x2"}, 1));
  for (int i = 0; i < 5; ++i) c.records.push_back(make_record({"z!C"}, 0));
  c.records.push_back(make_record({"x!A"}, std::nullopt));
  EXPECT_EQ(fit_blame_table(c), (BlameFrequencyTable{{"x!A", 8}, {"y!B", 7}, {"z!C", 5}}));
}

TEST(LogReg, PredictTieAndDepth) {
  LogRegParams p{Tensor({2}), Tensor({1})};
  p.w[0] = 1.0;
  p.w[1] = -2.0;
  RowMatrix one(1, 2);
  one << 3, 3;
  EXPECT_EQ(predict_logreg(p, one), 0u);
  RowMatrix same(3, 2);
  same.setConstant(1.0);
  EXPECT_EQ(predict_logreg(p, same), 0u);
  RowMatrix x(3, 2);
  x << 0, 1, 2, 0.5, 1, 0;  // scores -2, 1, 1 -> first maximum at 1
  EXPECT_EQ(predict_logreg(p, x), 1u);
}

namespace {

// Two features: feature 0 marks the blamed frame, feature 1 is a distractor on another frame.
std::vector<Example> separable_examples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<Eigen::Index>(2 + rng.below(5));
    Example ex;
    ex.x = RowMatrix::Zero(t, 2);
    ex.blame = static_cast<int>(rng.below(static_cast<std::uint64_t>(t)));
    ex.x(ex.blame, 0) = 1.0;
    ex.x((ex.blame + 1) % t, 1) = 1.0;
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST(LogReg, SeparableToyReachesPerfectAccuracy) {
  const auto train = separable_examples(200, 1);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 30;
  cfg.patience = 30;
  std::vector<EpochLog> hist;
  const auto p = train_logreg_params(train, train, cfg, nullptr, &hist);
  std::size_t hit = 0;
  for (const auto& ex : train) hit += static_cast<int>(predict_logreg(p, ex.x)) == ex.blame;
  EXPECT_EQ(hit, train.size());
  EXPECT_GT(p.w[0], 0.0);
  EXPECT_LT(p.w[1], 0.0);
  ASSERT_GE(hist.size(), 2u);
  EXPECT_LT(hist.back().train_loss, hist.front().train_loss);
}

TEST(LogReg, SingleClassRejected) {
  std::vector<Example> ex(3);
  for (auto& e : ex) {
    e.x = RowMatrix::Ones(1, 2);
    e.blame = 0;
  }
  EXPECT_THROW(train_logreg_params(ex, ex, tiny_config()), DataError);
}

TEST(LogReg, BeatsTopFrameOnGeneratedData) {
  const Corpus all = generated(3000, 41);
  const auto [train, test] = temporal_split(all, 0.8);
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 10;
  const auto lr = train_logreg(head(train, 2000), Corpus{{train.records.begin() + 2000, train.records.end()}, ""},
                               cfg);
  std::size_t lr_hit = 0, top_hit = 0;
  for (const auto& r : test.records) {
    lr_hit += predict_blame(lr, r).index == *r.blame_index;
    top_hit += *r.blame_index == 0;
  }
  EXPECT_GT(lr_hit, top_hit);
}

class SequenceFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const Corpus all = generated(260, 42);
    train_ = new Corpus(head(all, 200));
    valid_ = new Corpus{{all.records.begin() + 200, all.records.end()}, ""};
  }
  static void TearDownTestSuite() {
    delete train_;
    delete valid_;
  }
  static Corpus* train_;
  static Corpus* valid_;
};
Corpus* SequenceFixture::train_ = nullptr;
Corpus* SequenceFixture::valid_ = nullptr;

TEST_F(SequenceFixture, FullLossGradientCheck) {
  const Featurizer f = Featurizer::fit(*train_, {6, AppMatch::kBaseNamePrefix});
  const std::vector<std::string> classes = {"A", "B", "C"};
  for (bool multitask : {false, true}) {
    SequenceParams p = SequenceParams::init(f.dimension(), 3, multitask ? 3 : 0, 9);
    Rng rng(10);
    // Move the head and transitions away from their symmetric starting values.
    oracles::randomize(p.head.b, rng, 0.5);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        if (!CrfParams::is_fixed(a, b)) p.crf(a, b) = rng.uniform(-1, 1);
    if (multitask) oracles::randomize(p.bc, rng, 0.5);
    Example ex;
    ex.x = f.transform(make_record(fixtures::edge_logging_stack(), 2)).features.mat().topRows(4);
    ex.blame = 2;
    ex.cls = 1;
    const RowMatrix mask = dropout_mask(4, 6, 0.25, rng);
    SequenceParams g = SequenceParams::zeros(f.dimension(), 3, multitask ? 3 : 0);
    sequence_loss(p, ex, multitask, 0.5, &mask, &g);
    auto loss = [&] { return sequence_loss(p, ex, multitask, 0.5, &mask, nullptr); };
    EXPECT_LT(grad_check(loss, p.tensors(), std::as_const(g).tensors()), 1e-4) << "multitask=" << multitask;
  }
}

TEST_F(SequenceFixture, ClassHeadGradientVanishesAtLambdaZero) {
  const Featurizer f = Featurizer::fit(*train_, {6, AppMatch::kBaseNamePrefix});
  const SequenceParams p = SequenceParams::init(f.dimension(), 3, 2, 1);
  Example ex;
  ex.x = f.transform(train_->records[0]).features.mat();
  ex.blame = static_cast<int>(*train_->records[0].blame_index);
  ex.cls = 1;
  SequenceParams g = SequenceParams::zeros(f.dimension(), 3, 2);
  SequenceParams g_ba = SequenceParams::zeros(f.dimension(), 3, 0);
  const double l_da = sequence_loss(p, ex, true, 0.0, nullptr, &g);
  SequenceParams p_ba = p;
  p_ba.wc = Tensor();
  p_ba.bc = Tensor();
  const double l_ba = sequence_loss(p_ba, ex, false, 0.0, nullptr, &g_ba);
  EXPECT_EQ(l_da, l_ba);
  EXPECT_EQ(g.wc.vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.bc.vec().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.fwd.wx, g_ba.fwd.wx);
}

TEST_F(SequenceFixture, SharedInitIndependentOfClassHead) {
  const auto a = SequenceParams::init(20, 4, 0, 3);
  const auto b = SequenceParams::init(20, 4, 6, 3);
  EXPECT_EQ(a.fwd.wx, b.fwd.wx);
  EXPECT_EQ(a.bwd.wh, b.bwd.wh);
  EXPECT_EQ(a.head.w, b.head.w);
  EXPECT_EQ(a.attn.wa, b.attn.wa);
}

TEST_F(SequenceFixture, LambdaZeroDeepAnalyzeMatchesBaseline) {
  TrainConfig cfg = tiny_config();
  cfg.lambda = 0.0;
  cfg.max_epochs = 2;
  const auto ba = train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, cfg);
  const auto da = train_sequence_model(ModelKind::kDeepAnalyze, *train_, *valid_, cfg);
  ASSERT_EQ(ba.history.size(), da.history.size());
  for (std::size_t i = 0; i < ba.history.size(); ++i) {
    EXPECT_EQ(ba.history[i].train_loss, da.history[i].train_loss);
    EXPECT_EQ(ba.history[i].valid_accuracy, da.history[i].valid_accuracy);
  }
  EXPECT_EQ(ba.seq.fwd.wx, da.seq.fwd.wx);
}

TEST_F(SequenceFixture, TrainingLossDecreases) {
  TrainConfig cfg = tiny_config();
  cfg.hidden = 8;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  cfg.learning_rate = 5e-3;
  const auto b = train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, cfg);
  ASSERT_EQ(b.history.size(), 4u);
  for (std::size_t i = 1; i < b.history.size(); ++i) EXPECT_LT(b.history[i].train_loss, b.history[i - 1].train_loss);
}

TEST_F(SequenceFixture, DeterministicTraining) {
  const auto a = train_sequence_model(ModelKind::kDeepAnalyze, *train_, *valid_, tiny_config());
  const auto b = train_sequence_model(ModelKind::kDeepAnalyze, *train_, *valid_, tiny_config());
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  TrainConfig other = tiny_config();
  other.seed = 6;
  EXPECT_NE(serialize_model(a), serialize_model(train_sequence_model(ModelKind::kDeepAnalyze, *train_, *valid_, other)));
}

TEST_F(SequenceFixture, EarlyStoppingRestoresBest) {
  TrainConfig cfg = tiny_config();
  cfg.max_epochs = 6;
  cfg.patience = 1;
  const auto b = train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, cfg);
  ASSERT_GE(b.best_epoch, 1u);
  double best = 0.0;
  for (const auto& h : b.history) best = std::max(best, h.valid_accuracy);
  EXPECT_EQ(b.history[b.best_epoch - 1].valid_accuracy, best);
  // Halting happens exactly `patience` epochs after the best one, or at max_epochs.
  EXPECT_TRUE(b.history.size() == cfg.max_epochs || b.history.size() == b.best_epoch + cfg.patience);
  std::size_t hit = 0;
  for (const auto& r : valid_->records) hit += predict_blame(b, r).index == *r.blame_index;
  EXPECT_DOUBLE_EQ(static_cast<double>(hit) / static_cast<double>(valid_->size()), best);
}

TEST_F(SequenceFixture, PredictionProperties) {
  const auto b = train_sequence_model(ModelKind::kDeepAnalyze, *train_, *valid_, tiny_config());
  EXPECT_EQ(predict_blame(b, make_record({"msedge.dll!a::b"}, 0)).index, 0u);
  for (const auto& r : valid_->records) {
    const auto p1 = predict_blame(b, r);
    const auto p2 = predict_blame(b, r);
    EXPECT_EQ(p1.index, p2.index);
    EXPECT_EQ(p1.alpha, p2.alpha);
    EXPECT_LT(p1.index, r.depth());
    EXPECT_EQ(p1.alpha.size(), r.depth());
    EXPECT_FALSE(p1.fallback);
    const auto c = predict_problem_class(b, r);
    double s = 0.0;
    for (double v : c.probabilities) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
    EXPECT_EQ(c.probabilities.size(), b.classes.size());
  }
  const auto ba = train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, tiny_config());
  EXPECT_THROW(predict_problem_class(ba, valid_->records[0]), std::invalid_argument);
}

TEST_F(SequenceFixture, SingleClassCorpusPredictsThatClass) {
  Corpus one = *train_;
  for (auto& r : one.records) r.problem_class = "ONLY";
  const auto b = train_sequence_model(ModelKind::kDeepAnalyze, one, *valid_, tiny_config());
  ASSERT_EQ(b.classes, (std::vector<std::string>{"ONLY"}));
  EXPECT_EQ(predict_problem_class(b, valid_->records[0]).problem_class, "ONLY");
}

TEST_F(SequenceFixture, UnconstrainedDecodeFlag) {
  TrainConfig cfg = tiny_config();
  cfg.unconstrained_decode = true;
  const auto b = train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, cfg);
  for (const auto& r : valid_->records) EXPECT_LT(predict_blame(b, r).index, r.depth());
}

TEST_F(SequenceFixture, Errors) {
  EXPECT_THROW(train_sequence_model(ModelKind::kBiLstmCrfAttn, Corpus{}, *valid_, tiny_config()), DataError);
  EXPECT_THROW(train_sequence_model(ModelKind::kLogReg, *train_, *valid_, tiny_config()), std::invalid_argument);
  Corpus unlabeled = *train_;
  unlabeled.records[3].blame_index.reset();
  EXPECT_THROW(train_sequence_model(ModelKind::kBiLstmCrfAttn, unlabeled, *valid_, tiny_config()), DataError);
  TrainConfig bad = tiny_config();
  bad.dropout = 1.0;
  EXPECT_THROW(train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, bad), std::invalid_argument);
  TrainConfig explode = tiny_config();
  explode.learning_rate = 1e300;
  explode.max_epochs = 3;
  EXPECT_THROW(train_sequence_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, explode), TrainingError);
}

TEST_F(SequenceFixture, FineTune) {
  const auto global = train_sequence_model(ModelKind::kDeepAnalyze, *train_, *valid_, tiny_config());
  const auto same = fine_tune(global, Corpus{}, *valid_, tiny_config());
  EXPECT_EQ(serialize_model(same), serialize_model(global));
  const auto tuned = fine_tune(global, head(*valid_, 40), *valid_, tiny_config());
  EXPECT_EQ(tuned.featurizer.namespace_vocab().tokens, global.featurizer.namespace_vocab().tokens);
  EXPECT_NE(tuned.seq.fwd.wx, global.seq.fwd.wx);
  EXPECT_NE(tuned.train_digest, global.train_digest);

  ModelBundle broken = global;
  broken.featurizer = Featurizer::fit(*train_, {7, AppMatch::kBaseNamePrefix});
  EXPECT_THROW(fine_tune(broken, head(*valid_, 10), *valid_, tiny_config()), std::invalid_argument);
  ModelBundle top;
  EXPECT_THROW(fine_tune(top, head(*valid_, 10), *valid_, tiny_config()), std::invalid_argument);
}

TEST_F(SequenceFixture, FineTuneLogReg) {
  const auto global = train_logreg(*train_, *valid_, tiny_config());
  const auto tuned = fine_tune(global, head(*valid_, 40), *valid_, tiny_config());
  EXPECT_EQ(tuned.kind, ModelKind::kLogReg);
  EXPECT_NE(tuned.logreg.w, global.logreg.w);
}

TEST_F(SequenceFixture, ModelFileRoundTrip) {
  std::vector<ModelBundle> bundles;
  bundles.push_back(train_model(ModelKind::kTopFrame, *train_, *valid_, tiny_config()));
  bundles.push_back(train_model(ModelKind::kMostFreq, *train_, *valid_, tiny_config()));
  bundles.push_back(train_model(ModelKind::kLogReg, *train_, *valid_, tiny_config()));
  bundles.push_back(train_model(ModelKind::kBiLstmCrfAttn, *train_, *valid_, tiny_config()));
  bundles.push_back(train_model(ModelKind::kDeepAnalyze, *train_, *valid_, tiny_config()));
  for (const auto& b : bundles) {
    const auto path = temp_path(std::string("model_") + model_kind_name(b.kind) + ".bin");
    save_model(b, path);
    const auto back = load_model(path);
    EXPECT_EQ(serialize_model(back), serialize_model(b));
    EXPECT_EQ(back.kind, b.kind);
    EXPECT_EQ(back.classes, b.classes);
    EXPECT_EQ(back.table, b.table);
    for (std::size_t i = 0; i < 100; ++i) {
      const auto& r = train_->records[i];
      const auto p1 = predict_blame(b, r);
      const auto p2 = predict_blame(back, r);
      EXPECT_EQ(p1.index, p2.index);
      EXPECT_EQ(p1.alpha, p2.alpha);
    }
  }
}

TEST_F(SequenceFixture, ModelFileCorruption) {
  const auto b = train_model(ModelKind::kDeepAnalyze, *train_, *valid_, tiny_config());
  const std::string bytes = serialize_model(b);
  EXPECT_EQ(bytes.substr(0, 8), "CRASHLOC");
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 9}) {
    std::string t = bytes;
    t[pos] ^= 0x40;
    try {
      deserialize_model(t);
      FAIL() << "tamper at " << pos << " not detected";
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    }
  }
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_model(magic), DataError);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(deserialize_model(""), DataError);
  EXPECT_THROW(load_model(temp_path("missing.bin")), DataError);
}

TEST_F(SequenceFixture, ModelFileVersionChecked) {
  const auto b = train_model(ModelKind::kTopFrame, *train_, *valid_, tiny_config());
  std::string bytes = serialize_model(b);
  // Bump the little-endian version field after the magic and re-seal the checksum.
  bytes[8] = static_cast<char>(kModelFormatVersion + 1);
  const std::string body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t h = fnv1a(body);
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + static_cast<std::size_t>(i)] = static_cast<char>(h >> (8 * i));
  try {
    deserialize_model(bytes);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}
