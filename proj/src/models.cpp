#include "crashloc/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace crashloc {

namespace {

constexpr std::array<const char*, 6> kKindNames = {"top", "second", "most_freq", "logreg", "bilstm_crf_attn",
                                                    "deepanalyze"};

Labels labels_for(std::size_t depth, int blame) {
  Labels y(depth, kNotBF);
  y[static_cast<std::size_t>(blame)] = kBF;
  return y;
}

std::vector<std::string> class_list(const Corpus& corpus) {
  std::set<std::string> s;
  for (const auto& r : corpus.records) s.insert(r.problem_class);
  return {s.begin(), s.end()};
}

void require_labeled(const Corpus& corpus, const char* what) {
  if (corpus.empty()) throw DataError(std::string(what) + " corpus is empty");
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!corpus.records[i].blame_index)
      throw DataError(std::string(what) + " record " + std::to_string(i) + " has no blame label");
}

BlamePrediction decode_sequence(const SequenceParams& params, const RowMatrix& x, bool unconstrained) {
  const SequenceCache c = sequence_forward(params, x);
  BlamePrediction out;
  out.alpha.assign(c.att.alpha.data(), c.att.alpha.data() + c.att.alpha.size());
  if (unconstrained) {
    const Decoded d = viterbi_decode(c.p, params.crf);
    out.index = blame_index_from_labels(d.labels, c.p, params.crf, &out.fallback);
  } else {
    const Decoded d = constrained_decode(c.p, params.crf);
    out.index = blame_index_from_labels(d.labels, c.p, params.crf);
  }
  return out;
}

double sequence_accuracy(const SequenceParams& params, const std::vector<Example>& data, bool unconstrained) {
  if (data.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& ex : data)
    if (static_cast<int>(decode_sequence(params, ex.x, unconstrained).index) == ex.blame) ++hit;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

double logreg_accuracy(const LogRegParams& p, const std::vector<Example>& data) {
  if (data.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& ex : data)
    if (static_cast<int>(predict_logreg(p, ex.x)) == ex.blame) ++hit;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

void run_sequence_training(ModelBundle& b, const std::vector<Example>& train, const std::vector<Example>& valid,
                           double lr) {
  const TrainConfig& cfg = b.config;
  const bool multitask = b.kind == ModelKind::kDeepAnalyze;
  SequenceParams grad = SequenceParams::zeros(b.seq.input(), b.seq.hidden(), b.seq.classes());
  const auto params = b.seq.tensors();
  const auto grads = std::as_const(grad).tensors();
  AdamState adam = AdamState::for_params(params);
  SequenceParams best = b.seq;
  double best_acc = -1.0;
  std::size_t stall = 0;
  const auto width = static_cast<Eigen::Index>(2 * b.seq.hidden());
  b.history.clear();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = shuffled_order(train.size(), derive_seed(cfg.seed, 2 * epoch));
    Rng drop(derive_seed(cfg.seed, 2 * epoch + 1));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      grad.zero();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = train[order[k]];
        RowMatrix mask;
        if (cfg.dropout > 0.0) mask = dropout_mask(ex.x.rows(), width, cfg.dropout, drop);
        batch_loss += sequence_loss(b.seq, ex, multitask, cfg.lambda, cfg.dropout > 0.0 ? &mask : nullptr, &grad);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) + " at batch starting " +
                            std::to_string(start));
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Tensor* g : grad.tensors()) g->vec() *= scale;
      adam_step(adam, params, grads, lr);
      epoch_loss += batch_loss;
    }
    const double acc = sequence_accuracy(b.seq, valid, cfg.unconstrained_decode);
    b.history.push_back({epoch, epoch_loss / static_cast<double>(train.size()), acc});
    if (acc > best_acc) {
      best_acc = acc;
      best = b.seq;
      b.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      break;
    }
  }
  b.seq = best;
}

// ---- binary container ----

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(std::string_view s) { buf_.append(s); }
  void tensor(const Tensor& t) {
    u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string_view bytes) : b_(bytes) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const std::uint8_t rank = u8();
    if (rank < 1 || rank > 3) throw DataError("model file: bad tensor rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(u64());
      if (d > (1u << 26)) throw DataError("model file: tensor dimension too large");
      n *= d;
    }
    need(8 * n);
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = f64();
    return t;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw DataError("model file truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kMagic = "CRASHLOC";

void write_vocab(Writer& w, const TfIdfVocab& v) {
  w.u64(v.dimension);
  w.u32(static_cast<std::uint32_t>(v.tokens.size()));
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    w.str(v.tokens[i]);
    w.f64(v.idf[i]);
  }
}

TfIdfVocab read_vocab(Reader& r) {
  TfIdfVocab v;
  v.dimension = static_cast<std::size_t>(r.u64());
  const std::uint32_t n = r.u32();
  if (n > v.dimension) throw DataError("model file: vocabulary larger than its dimension");
  for (std::uint32_t i = 0; i < n; ++i) {
    v.tokens.push_back(r.str());
    v.idf.push_back(r.f64());
  }
  v.rebuild_index();
  return v;
}

LstmParams lstm_from(Tensor wx, Tensor wh, Tensor b) {
  LstmParams p;
  if (wx.rank() != 2 || wh.rank() != 2 || b.rank() != 1 || wx.rows() % 4 || wh.rows() != wx.rows() ||
      wh.cols() * 4 != wh.rows() || b.size() != wx.rows())
    throw DataError("model file: inconsistent LSTM shapes");
  p.hidden = wh.cols();
  p.input = wx.cols();
  p.wx = std::move(wx);
  p.wh = std::move(wh);
  p.b = std::move(b);
  return p;
}

}  // namespace

// ---- kinds ----

const char* model_kind_name(ModelKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

ModelKind parse_model_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (name == kKindNames[i]) return static_cast<ModelKind>(i);
  throw std::invalid_argument("unknown model kind '" + std::string(name) +
                              "' (expected top, second, most_freq, logreg, bilstm_crf_attn or deepanalyze)");
}

bool is_sequence_model(ModelKind kind) {
  return kind == ModelKind::kBiLstmCrfAttn || kind == ModelKind::kDeepAnalyze;
}

bool needs_features(ModelKind kind) { return kind == ModelKind::kLogReg || is_sequence_model(kind); }

// ---- heuristics ----

BlameFrequencyTable fit_blame_table(const Corpus& train) {
  BlameFrequencyTable t;
  for (const auto& r : train.records)
    if (r.blame_index) ++t[r.stack[*r.blame_index].method_key()];
  return t;
}

std::size_t predict_heuristic(ModelKind kind, const CrashRecord& record, const BlameFrequencyTable* table) {
  if (record.stack.empty()) throw DataError("cannot localize an empty stack");
  switch (kind) {
    case ModelKind::kTopFrame:
      return 0;
    case ModelKind::kSecondFrame:
      return std::min<std::size_t>(1, record.depth() - 1);
    case ModelKind::kMostFreq: {
      if (!table) throw std::invalid_argument("most_freq needs a blame frequency table");
      std::size_t best = 0, best_count = 0;
      for (std::size_t i = 0; i < record.depth(); ++i) {
        const auto it = table->find(record.stack[i].method_key());
        const std::size_t c = it == table->end() ? 0 : it->second;
        if (c > best_count) {
          best = i;
          best_count = c;
        }
      }
      return best;
    }
    default:
      throw std::invalid_argument("not a heuristic model kind");
  }
}

// ---- sequence parameters ----

SequenceParams SequenceParams::zeros(std::size_t input, std::size_t hidden, std::size_t classes) {
  SequenceParams p;
  p.fwd = LstmParams::zeros(input, hidden);
  p.bwd = LstmParams::zeros(input, hidden);
  p.attn.wa = Tensor({2 * hidden});
  p.head.w = Tensor({kTagCount, 4 * hidden});
  p.head.b = Tensor({kTagCount});
  p.crf.a.zero();
  if (classes) {
    p.wc = Tensor({classes, 2 * hidden});
    p.bc = Tensor({classes});
  }
  return p;
}

SequenceParams SequenceParams::init(std::size_t input, std::size_t hidden, std::size_t classes,
                                    std::uint64_t seed) {
  SequenceParams p = zeros(input, hidden, classes);
  p.crf.enforce_fixed();
  Rng rng(derive_seed(seed, 0x5eed));
  p.fwd = LstmParams::init(input, hidden, rng);
  p.bwd = LstmParams::init(input, hidden, rng);
  const double ra = std::sqrt(6.0 / static_cast<double>(2 * hidden + 1));
  for (std::size_t i = 0; i < p.attn.wa.size(); ++i) p.attn.wa[i] = rng.uniform(-ra, ra);
  const double re = std::sqrt(6.0 / static_cast<double>(4 * hidden + kTagCount));
  for (std::size_t i = 0; i < p.head.w.size(); ++i) p.head.w[i] = rng.uniform(-re, re);
  if (classes) {
    Rng crng(derive_seed(seed, 0xc1a55));
    const double rc = std::sqrt(6.0 / static_cast<double>(2 * hidden + classes));
    for (std::size_t i = 0; i < p.wc.size(); ++i) p.wc[i] = crng.uniform(-rc, rc);
  }
  return p;
}

std::vector<Tensor*> SequenceParams::tensors() {
  std::vector<Tensor*> out = {&fwd.wx, &fwd.wh, &fwd.b, &bwd.wx, &bwd.wh, &bwd.b,
                              &attn.wa, &head.w, &head.b, &crf.a};
  if (!bc.empty()) {
    out.push_back(&wc);
    out.push_back(&bc);
  }
  return out;
}

std::vector<const Tensor*> SequenceParams::tensors() const {
  auto v = const_cast<SequenceParams*>(this)->tensors();
  return {v.begin(), v.end()};
}

void SequenceParams::zero() {
  for (Tensor* t : tensors()) t->zero();
}

SequenceCache sequence_forward(const SequenceParams& params, const RowMatrix& x, const RowMatrix* mask) {
  SequenceCache c;
  c.enc = bilstm_forward(params.fwd, params.bwd, x);
  if (mask) {
    c.mask = *mask;
    c.h = c.enc.h.cwiseProduct(*mask);
  } else {
    c.h = c.enc.h;
  }
  c.att = attend(c.h, params.attn);
  c.p = emissions(c.h, c.att.h_star, params.head);
  if (!params.bc.empty()) {
    const Eigen::VectorXd logits = params.wc.mat() * c.att.h_star + params.bc.vec();
    c.class_prob = softmax(logits);
  }
  return c;
}

double sequence_loss(const SequenceParams& params, const Example& ex, bool multitask, double lambda,
                     const RowMatrix* mask, SequenceParams* grad) {
  const SequenceCache c = sequence_forward(params, ex.x, mask);
  const auto T = static_cast<std::size_t>(ex.x.rows());
  if (ex.blame < 0 || static_cast<std::size_t>(ex.blame) >= T) throw DataError("example blame index out of range");
  const CrfLoss crf = crf_nll(c.p, params.crf, labels_for(T, ex.blame));
  double loss = crf.loss;
  const bool use_class = multitask && ex.cls >= 0 && !params.bc.empty();
  if (use_class) loss += lambda * -std::log(std::max(c.class_prob[ex.cls], 1e-300));
  if (!grad) return loss;

  grad->crf.a.vec() += crf.da.vec();
  EmissionGrads eg = emissions_backward(c.h, c.att.h_star, params.head, crf.dp, grad->head);
  if (use_class) {
    Eigen::VectorXd dlogits = lambda * c.class_prob;
    dlogits[ex.cls] -= lambda;
    grad->wc.mat().noalias() += dlogits * c.att.h_star.transpose();
    grad->bc.vec() += dlogits;
    eg.d_h_star.noalias() += params.wc.mat().transpose() * dlogits;
  }
  RowMatrix dh = eg.dh + attend_backward(c.h, params.attn, c.att, eg.d_h_star, grad->attn);
  if (mask) dh = dh.cwiseProduct(*mask);
  bilstm_backward(params.fwd, params.bwd, c.enc, dh, grad->fwd, grad->bwd, false);
  return loss;
}

// ---- training ----

std::vector<Example> make_examples(const Corpus& corpus, const Featurizer& featurizer,
                                   const std::vector<std::string>& classes, bool require_labels) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records) {
    if (r.stack.empty()) throw DataError("cannot featurize an empty stack");
    Example ex;
    ex.x = featurizer.transform(r).features.mat();
    if (r.blame_index) ex.blame = static_cast<int>(*r.blame_index);
    else if (require_labels) throw DataError("record without blame label in a training corpus");
    const auto it = std::lower_bound(classes.begin(), classes.end(), r.problem_class);
    if (it != classes.end() && *it == r.problem_class) ex.cls = static_cast<int>(it - classes.begin());
    out.push_back(std::move(ex));
  }
  return out;
}

std::size_t predict_logreg(const LogRegParams& params, const RowMatrix& x) {
  if (x.rows() == 0) throw DataError("cannot localize an empty stack");
  const Eigen::VectorXd z = x * params.w.vec();
  Eigen::Index best = 0;
  for (Eigen::Index t = 1; t < z.size(); ++t)
    if (z[t] > z[best]) best = t;
  return static_cast<std::size_t>(best);
}

LogRegParams train_logreg_params(const std::vector<Example>& train, const std::vector<Example>& valid,
                                 const TrainConfig& config, const LogRegParams* start,
                                 std::vector<EpochLog>* history) {
  if (train.empty()) throw DataError("training corpus is empty");
  const auto D = static_cast<std::size_t>(train.front().x.cols());
  std::size_t pos = 0, neg = 0;
  for (const auto& ex : train) {
    pos += 1;
    neg += static_cast<std::size_t>(ex.x.rows()) - 1;
  }
  if (neg == 0) throw DataError("logistic regression needs both blamed and non-blamed frames");
  const double w_pos = static_cast<double>(neg) / static_cast<double>(pos);

  LogRegParams p;
  if (start) {
    p = *start;
  } else {
    p.w = Tensor({D});
  }
  LogRegParams g{Tensor({D}), Tensor({1})};
  std::vector<Tensor*> params = {&p.w, &p.b};
  std::vector<const Tensor*> grads = {&g.w, &g.b};
  AdamState adam = AdamState::for_params(params);
  LogRegParams best = p;
  double best_acc = -1.0;
  std::size_t stall = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = shuffled_order(train.size(), derive_seed(config.seed, 2 * epoch));
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      const std::size_t e = std::min(order.size(), s + config.batch_size);
      g.w.zero();
      g.b.zero();
      double weight = 0.0;
      for (std::size_t k = s; k < e; ++k) {
        const Example& ex = train[order[k]];
        const Eigen::VectorXd z = (ex.x * p.w.vec()).array() + p.b[0];
        Eigen::VectorXd dz(z.size());
        for (Eigen::Index t = 0; t < z.size(); ++t) {
          const bool y = t == ex.blame;
          const double wt = y ? w_pos : 1.0;
          const double q = sigmoid(z[t]);
          // log(1 + exp(-|z|)) form keeps the loss finite for large |z|.
          const double margin = y ? z[t] : -z[t];
          epoch_loss += wt * (std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin))));
          dz[t] = wt * (q - (y ? 1.0 : 0.0));
          weight += wt;
        }
        g.w.vec().noalias() += ex.x.transpose() * dz;
        g.b[0] += dz.sum();
      }
      g.w.vec() /= weight;
      g.b[0] /= weight;
      adam_step(adam, params, grads, config.logreg_learning_rate);
    }
    if (!std::isfinite(epoch_loss)) throw TrainingError("non-finite logistic loss in epoch " + std::to_string(epoch));
    const double acc = logreg_accuracy(p, valid);
    if (history) history->push_back({epoch, epoch_loss / static_cast<double>(train.size()), acc});
    if (acc > best_acc) {
      best_acc = acc;
      best = p;
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }
  return best;
}

ModelBundle train_logreg(const Corpus& train, const Corpus& valid, const TrainConfig& config,
                         FeaturizerOptions options) {
  config.validate();
  require_labeled(train, "training");
  require_labeled(valid, "validation");
  ModelBundle b;
  b.kind = ModelKind::kLogReg;
  b.config = config;
  b.featurizer = Featurizer::fit(train, options);
  b.train_digest = corpus_digest(train);
  const auto tr = make_examples(train, b.featurizer, {}, true);
  const auto va = make_examples(valid, b.featurizer, {}, true);
  b.logreg = train_logreg_params(tr, va, config, nullptr, &b.history);
  for (const auto& h : b.history)
    if (b.best_epoch == 0 || h.valid_accuracy > b.history[b.best_epoch - 1].valid_accuracy) b.best_epoch = h.epoch;
  return b;
}

ModelBundle train_sequence_model(ModelKind kind, const Corpus& train, const Corpus& valid,
                                 const TrainConfig& config, FeaturizerOptions options) {
  if (!is_sequence_model(kind)) throw std::invalid_argument("not a sequence model kind");
  config.validate();
  require_labeled(train, "training");
  require_labeled(valid, "validation");
  ModelBundle b;
  b.kind = kind;
  b.config = config;
  b.featurizer = Featurizer::fit(train, options);
  b.train_digest = corpus_digest(train);
  if (kind == ModelKind::kDeepAnalyze) b.classes = class_list(train);
  b.seq = SequenceParams::init(b.featurizer.dimension(), config.hidden, b.classes.size(), config.seed);
  const auto tr = make_examples(train, b.featurizer, b.classes, true);
  const auto va = make_examples(valid, b.featurizer, b.classes, true);
  run_sequence_training(b, tr, va, config.learning_rate);
  return b;
}

ModelBundle train_model(ModelKind kind, const Corpus& train, const Corpus& valid, const TrainConfig& config,
                        FeaturizerOptions options) {
  if (is_sequence_model(kind)) return train_sequence_model(kind, train, valid, config, options);
  if (kind == ModelKind::kLogReg) return train_logreg(train, valid, config, options);
  config.validate();
  ModelBundle b;
  b.kind = kind;
  b.config = config;
  b.train_digest = corpus_digest(train);
  if (kind == ModelKind::kMostFreq) {
    require_labeled(train, "training");
    b.table = fit_blame_table(train);
  }
  return b;
}

ModelBundle fine_tune(const ModelBundle& global, const Corpus& target_train, const Corpus& target_valid,
                      const TrainConfig& config) {
  if (target_train.empty()) return global;
  if (!needs_features(global.kind)) throw std::invalid_argument("fine-tuning needs a trained logreg or sequence model");
  config.validate();
  require_labeled(target_train, "target training");
  require_labeled(target_valid, "target validation");
  ModelBundle b = global;
  b.config = config;
  b.config.hidden = global.config.hidden;
  b.train_digest = fnv1a_u64(corpus_digest(target_train), global.train_digest);
  const auto tr = make_examples(target_train, b.featurizer, b.classes, true);
  const auto va = make_examples(target_valid, b.featurizer, b.classes, true);
  if (b.kind == ModelKind::kLogReg) {
    if (b.logreg.w.size() != b.featurizer.dimension()) throw std::invalid_argument("vocabulary does not match model");
    TrainConfig c = config;
    c.logreg_learning_rate *= config.finetune_lr_scale;
    b.history.clear();
    b.logreg = train_logreg_params(tr, va, c, &global.logreg, &b.history);
    return b;
  }
  if (b.seq.input() != b.featurizer.dimension()) throw std::invalid_argument("vocabulary does not match model");
  run_sequence_training(b, tr, va, config.learning_rate * config.finetune_lr_scale);
  return b;
}

// ---- prediction ----

BlamePrediction predict_blame(const ModelBundle& bundle, const CrashRecord& record) {
  if (record.stack.empty()) throw DataError("cannot localize an empty stack");
  switch (bundle.kind) {
    case ModelKind::kTopFrame:
    case ModelKind::kSecondFrame:
    case ModelKind::kMostFreq:
      return {predict_heuristic(bundle.kind, record, &bundle.table), {}, false};
    case ModelKind::kLogReg: {
      const RowMatrix x = bundle.featurizer.transform(record).features.mat();
      return {predict_logreg(bundle.logreg, x), {}, false};
    }
    default: {
      const RowMatrix x = bundle.featurizer.transform(record).features.mat();
      return decode_sequence(bundle.seq, x, bundle.config.unconstrained_decode);
    }
  }
}

std::vector<BlamePrediction> predict_blame(const ModelBundle& bundle, const Corpus& corpus) {
  std::vector<BlamePrediction> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus.records) out.push_back(predict_blame(bundle, r));
  return out;
}

ClassPrediction predict_problem_class(const ModelBundle& bundle, const CrashRecord& record) {
  if (!bundle.has_class_head()) throw std::invalid_argument("model has no problem-class head");
  if (record.stack.empty()) throw DataError("cannot classify an empty stack");
  const RowMatrix x = bundle.featurizer.transform(record).features.mat();
  const SequenceCache c = sequence_forward(bundle.seq, x);
  ClassPrediction out;
  out.probabilities.assign(c.class_prob.data(), c.class_prob.data() + c.class_prob.size());
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < c.class_prob.size(); ++i)
    if (c.class_prob[i] > c.class_prob[best]) best = i;
  out.problem_class = bundle.classes[static_cast<std::size_t>(best)];
  return out;
}

// ---- serialization ----

std::string serialize_model(const ModelBundle& b) {
  Writer w;
  w.raw(kMagic);
  w.u32(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(b.kind));
  const TrainConfig& c = b.config;
  w.f64(c.learning_rate);
  w.u64(c.batch_size);
  w.u64(c.max_epochs);
  w.u64(c.patience);
  w.f64(c.dropout);
  w.u64(c.hidden);
  w.u64(c.seed);
  w.f64(c.validation_fraction);
  w.f64(c.lambda);
  w.f64(c.finetune_lr_scale);
  w.f64(c.logreg_learning_rate);
  w.u8(c.unconstrained_decode);
  w.u64(b.train_digest);
  w.u64(b.best_epoch);
  w.u32(static_cast<std::uint32_t>(b.history.size()));
  for (const auto& h : b.history) {
    w.u64(h.epoch);
    w.f64(h.train_loss);
    w.f64(h.valid_accuracy);
  }
  w.u32(static_cast<std::uint32_t>(b.classes.size()));
  for (const auto& s : b.classes) w.str(s);
  w.u64(b.featurizer.options().dimension);
  w.u8(static_cast<std::uint8_t>(b.featurizer.options().app_match));
  write_vocab(w, b.featurizer.namespace_vocab());
  write_vocab(w, b.featurizer.method_vocab());
  w.u32(static_cast<std::uint32_t>(b.table.size()));
  for (const auto& [k, n] : b.table) {
    w.str(k);
    w.u64(n);
  }
  std::vector<const Tensor*> tensors;
  if (b.kind == ModelKind::kLogReg) tensors = {&b.logreg.w, &b.logreg.b};
  if (is_sequence_model(b.kind)) tensors = b.seq.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) w.tensor(*t);
  std::string out = w.bytes();
  Writer tail;
  tail.u64(fnv1a(out));
  return out + tail.bytes();
}

ModelBundle deserialize_model(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + 12 || bytes.compare(0, kMagic.size(), kMagic) != 0)
    throw DataError("not a model file (bad magic)");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.u64() != fnv1a(body)) throw DataError("model file checksum mismatch (corrupt or tampered)");
  Reader r(body.substr(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw DataError("model format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kModelFormatVersion) + ")");
  ModelBundle b;
  const std::uint8_t kind = r.u8();
  if (kind >= kKindNames.size()) throw DataError("model file: unknown model kind");
  b.kind = static_cast<ModelKind>(kind);
  TrainConfig& c = b.config;
  c.learning_rate = r.f64();
  c.batch_size = static_cast<std::size_t>(r.u64());
  c.max_epochs = static_cast<std::size_t>(r.u64());
  c.patience = static_cast<std::size_t>(r.u64());
  c.dropout = r.f64();
  c.hidden = static_cast<std::size_t>(r.u64());
  c.seed = r.u64();
  c.validation_fraction = r.f64();
  c.lambda = r.f64();
  c.finetune_lr_scale = r.f64();
  c.logreg_learning_rate = r.f64();
  c.unconstrained_decode = r.u8() != 0;
  b.train_digest = r.u64();
  b.best_epoch = static_cast<std::size_t>(r.u64());
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    EpochLog h;
    h.epoch = static_cast<std::size_t>(r.u64());
    h.train_loss = r.f64();
    h.valid_accuracy = r.f64();
    b.history.push_back(h);
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) b.classes.push_back(r.str());
  FeaturizerOptions opts;
  opts.dimension = static_cast<std::size_t>(r.u64());
  const std::uint8_t match = r.u8();
  if (match > static_cast<std::uint8_t>(AppMatch::kSubstring)) throw DataError("model file: bad app-match mode");
  opts.app_match = static_cast<AppMatch>(match);
  TfIdfVocab ns = read_vocab(r);
  TfIdfVocab me = read_vocab(r);
  if (needs_features(b.kind)) {
    try {
      b.featurizer = Featurizer(std::move(ns), std::move(me), opts);
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("model file: ") + e.what());
    }
  }
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string k = r.str();
    b.table[k] = static_cast<std::size_t>(r.u64());
  }
  std::vector<Tensor> ts;
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) ts.push_back(r.tensor());
  if (!r.done()) throw DataError("model file: trailing bytes");
  if (b.kind == ModelKind::kLogReg) {
    if (ts.size() != 2 || ts[0].size() != b.featurizer.dimension() || ts[1].size() != 1)
      throw DataError("model file: bad logistic regression tensors");
    b.logreg.w = std::move(ts[0]);
    b.logreg.b = std::move(ts[1]);
  } else if (is_sequence_model(b.kind)) {
    const std::size_t want = b.classes.empty() || b.kind != ModelKind::kDeepAnalyze ? 10 : 12;
    if (ts.size() != want) throw DataError("model file: wrong tensor count");
    SequenceParams& s = b.seq;
    s.fwd = lstm_from(std::move(ts[0]), std::move(ts[1]), std::move(ts[2]));
    s.bwd = lstm_from(std::move(ts[3]), std::move(ts[4]), std::move(ts[5]));
    const std::size_t H = s.fwd.hidden;
    if (s.fwd.input != b.featurizer.dimension() || s.bwd.hidden != H || s.bwd.input != s.fwd.input)
      throw DataError("model file: encoder does not match the vocabulary");
    s.attn.wa = std::move(ts[6]);
    s.head.w = std::move(ts[7]);
    s.head.b = std::move(ts[8]);
    s.crf.a = std::move(ts[9]);
    if (s.attn.wa.size() != 2 * H || s.head.w.shape() != std::vector<std::size_t>{kTagCount, 4 * H} ||
        s.head.b.size() != kTagCount || s.crf.a.shape() != std::vector<std::size_t>{4, 4})
      throw DataError("model file: head shapes are inconsistent");
    if (want == 12) {
      s.wc = std::move(ts[10]);
      s.bc = std::move(ts[11]);
      if (s.wc.shape() != std::vector<std::size_t>{b.classes.size(), 2 * H} || s.bc.size() != b.classes.size())
        throw DataError("model file: class head shapes are inconsistent");
    }
  } else if (!ts.empty()) {
    throw DataError("model file: unexpected tensors for a heuristic model");
  }
  return b;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(bundle));
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_model(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace crashloc
