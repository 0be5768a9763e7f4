#include "sar/train.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "sar/attn_eval.hpp"
#include "sar/checkpoint.hpp"
#include "sar/config.hpp"
#include "sar/error.hpp"

namespace sar {

namespace {

using nlohmann::json;

// Samples handled by one worker before its gradient buffer is folded in.
constexpr int kChunk = 8;

template <class E, std::size_t N>
E parse_enum(std::string_view name, const std::array<std::pair<E, std::string_view>, N>& table,
             const char* what) {
  for (const auto& [e, s] : table) {
    if (s == name) return e;
  }
  throw Error(ErrorCode::InvalidArgument,
              std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr std::array<std::pair<AuxLoss, std::string_view>, 3> kAuxNames{{
    {AuxLoss::None, "none"},
    {AuxLoss::SpatialEntropy, "spatial_entropy"},
    {AuxLoss::TotalVariation, "total_variation"},
}};

constexpr std::array<std::pair<Precision, std::string_view>, 2> kPrecisionNames{{
    {Precision::Float32, "float32"},
    {Precision::Float64, "float64"},
}};

// splitmix64 finaliser
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <class T>
bool all_finite(std::span<const T> v) {
  bool ok = true;
#pragma omp simd reduction(&& : ok)
  for (std::size_t i = 0; i < v.size(); ++i) ok = ok && std::isfinite(v[i]);
  return ok;
}

template <class T>
int argmax(std::span<const T> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct SampleStats {
  double ce = 0.0;
  double aux = 0.0;
  double entropy = 0.0;
  double components = 0.0;
  bool correct = false;
};

// Mean entropy and component count over the heads of one sample.
void entropy_summary(std::span<const EntropyResult> heads, SampleStats& s) {
  double h = 0.0, c = 0.0;
  for (const auto& r : heads) {
    h += r.entropy;
    c += r.components.count;
  }
  s.entropy = h / static_cast<double>(heads.size());
  s.components = c / static_cast<double>(heads.size());
}

json metrics_json(const EvalMetrics& m) {
  return {{"samples", m.samples},   {"loss", m.loss},
          {"accuracy", m.accuracy}, {"entropy", m.entropy},
          {"components", m.components}, {"jaccard", m.jaccard}};
}

EvalMetrics metrics_from(const json& j) {
  EvalMetrics m;
  m.samples = j.at("samples").get<int>();
  m.loss = j.at("loss").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  m.entropy = j.at("entropy").get<double>();
  m.components = j.at("components").get<double>();
  m.jaccard = j.at("jaccard").get<double>();
  return m;
}

}  // namespace

std::string_view to_string(AuxLoss a) {
  for (const auto& [e, s] : kAuxNames) {
    if (e == a) return s;
  }
  return "?";
}

AuxLoss parse_aux_loss(std::string_view name) { return parse_enum(name, kAuxNames, "aux loss"); }

std::string_view to_string(Precision p) {
  for (const auto& [e, s] : kPrecisionNames) {
    if (e == p) return s;
  }
  return "?";
}

Precision parse_precision(std::string_view name) {
  return parse_enum(name, kPrecisionNames, "precision");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be a finite value >= 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(min_lr >= 0.0) || min_lr > lr) fail("minLr must lie in [0, lr]");
  if (!(weight_decay >= 0.0)) fail("weightDecay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adamEps must be > 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batchSize must be >= 1");
  if (test_samples < 0) fail("testSamples must be >= 0");
  if (eval_every < 0 || checkpoint_every < 0) fail("evalEvery/checkpointEvery must be >= 0");
  if (!(jaccard_fraction > 0.0 && jaccard_fraction <= 1.0)) {
    fail("jaccardFraction must lie in (0, 1]");
  }
  if (!(loss.epsilon > 0.0)) fail("loss.epsilon must be > 0");
  model.validate();
  dataset.validate();
  if (model.channels != 1) fail("the shape dataset is single-channel; model.channels must be 1");
  if (dataset.image_size != model.image_size || dataset.patch_size != model.patch_size) {
    fail("dataset and model disagree on image or patch size");
  }
  if (static_cast<int>(dataset.classes.size()) != model.num_classes) {
    fail("model.numClasses must equal the number of dataset classes");
  }
}

int TrainConfig::steps_per_epoch() const {
  return (dataset.samples + batch_size - 1) / batch_size;
}

long TrainConfig::total_steps() const { return static_cast<long>(steps_per_epoch()) * epochs; }

double cosine_lr(const TrainConfig& cfg, long step, long total) {
  if (total <= 1) return cfg.lr;
  const double t = static_cast<double>(std::clamp(step, 0L, total - 1)) / (total - 1);
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return mix(mix(seed ^ mix(static_cast<std::uint64_t>(stream))) + index);
}

// ---------------------------------------------------------------------------
// Run log

std::string to_json_line(const EpochRecord& r) {
  json j = {{"epoch", r.epoch},       {"step", r.step},         {"lr", r.lr},
            {"loss", r.loss},         {"ce", r.ce},             {"aux", r.aux},
            {"accuracy", r.accuracy}, {"entropy", r.entropy},   {"components", r.components}};
  j["test"] = r.test ? metrics_json(*r.test) : json(nullptr);
  return j.dump();
}

EpochRecord parse_json_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.step = j.at("step").get<long>();
    r.lr = j.at("lr").get<double>();
    r.loss = j.at("loss").get<double>();
    r.ce = j.at("ce").get<double>();
    r.aux = j.at("aux").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.entropy = j.at("entropy").get<double>();
    r.components = j.at("components").get<double>();
    if (j.contains("test") && !j.at("test").is_null()) r.test = metrics_from(j.at("test"));
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigParse, std::string("bad run-log record: ") + e.what());
  }
}

std::vector<EpochRecord> read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open run log " + path.string());
  std::vector<EpochRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_json_line(line));
  }
  return out;
}

RunLogWriter::RunLogWriter(std::filesystem::path path) : path_(std::move(path)) {}

void RunLogWriter::append(const EpochRecord& r) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + path_.string());
  out << to_json_line(r) << '\n';
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path_.string());
}

// ---------------------------------------------------------------------------
// Trainer

template <class T>
Trainer<T>::Trainer(TrainConfig cfg, std::vector<ShapeSample> train)
    : cfg_(std::move(cfg)), train_(std::move(train)), model_(cfg_.model) {
  cfg_.validate();
  if (train_.empty()) throw Error(ErrorCode::InvalidArgument, "training set is empty");
  const int pixels = cfg_.model.image_size * cfg_.model.image_size;
  images_.reserve(train_.size());
  for (const auto& s : train_) {
    if (static_cast<int>(s.image.size()) != pixels) {
      throw Error(ErrorCode::DimensionMismatch, "training image has the wrong size");
    }
    images_.push_back(to_precision<T>(s.image));
  }

  std::mt19937_64 rng(derive_seed(cfg_.seed, Stream::Init));
  model_.init(rng);

  const std::size_t n = model_.parameter_count();
  m_.assign(n, T(0));
  v_.assign(n, T(0));
  grad_.assign(n, T(0));
  const int chunks = (std::min<int>(cfg_.batch_size, static_cast<int>(train_.size())) + kChunk - 1) / kChunk;
  chunk_grads_.assign(chunks, std::vector<T>(n, T(0)));
  decay_mask_.assign(n, 0);
  for (const auto& e : model_.layout().entries()) {
    if (e.decay) std::fill_n(decay_mask_.begin() + e.offset, e.size(), 1);
  }
}

template <class T>
void Trainer<T>::restore(std::span<const T> params, std::span<const T> m, std::span<const T> v,
                         long step, int epoch) {
  const std::size_t n = model_.parameter_count();
  if (params.size() != n || m.size() != n || v.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "restored state has the wrong parameter count");
  }
  if (step < 0 || epoch < 0) throw Error(ErrorCode::InvalidArgument, "negative step or epoch");
  std::copy(params.begin(), params.end(), model_.parameters().begin());
  std::copy(m.begin(), m.end(), m_.begin());
  std::copy(v.begin(), v.end(), v_.begin());
  step_ = step;
  epoch_ = epoch;
  cursor_ = 0;
  epoch_sum_ = {};
  epoch_batches_ = 0;
}

template <class T>
void Trainer<T>::shuffle_epoch() {
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg_.seed, Stream::Shuffle, static_cast<std::uint64_t>(epoch_)));
  std::shuffle(order_.begin(), order_.end(), rng);
}

template <class T>
void Trainer<T>::dump_batch(std::span<const int> batch, std::span<const double> ce,
                            std::span<const double> aux, const std::string& reason) const {
  json j;
  j["reason"] = reason;
  j["epoch"] = epoch_ + 1;
  j["step"] = step_;
  j["lr"] = cosine_lr(cfg_, step_, cfg_.total_steps());
  json samples = json::array();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    // NaN is not representable in JSON; write the losses as strings.
    samples.push_back({{"index", batch[i]},
                       {"label", train_[batch[i]].label},
                       {"ce", std::to_string(ce[i])},
                       {"aux", std::to_string(aux[i])}});
  }
  j["samples"] = samples;
  const std::string text = j.dump(2);
  if (!dump_path_.empty()) {
    std::ofstream out(dump_path_);
    out << text << '\n';
  }
  std::cerr << text << '\n';
}

template <class T>
StepStats Trainer<T>::step() {
  if (cursor_ == 0) shuffle_epoch();
  const int n_total = static_cast<int>(train_.size());
  const int bsz = std::min(cfg_.batch_size, n_total - cursor_);
  const std::span<const int> batch(order_.data() + cursor_, bsz);
  const int chunks = (bsz + kChunk - 1) / kChunk;
  const ViTConfig& mc = cfg_.model;
  const int heads = mc.heads;
  const int k = mc.grid_side();

  const T logit_scale = T(1) / static_cast<T>(bsz);
  const double aux_scale = cfg_.lambda / static_cast<double>(bsz);

  std::vector<SampleStats> stats(bsz);
  std::vector<std::exception_ptr> errors(chunks);

#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < chunks; ++c) {
    try {
      auto& g = chunk_grads_[c];
      std::fill(g.begin(), g.end(), T(0));
      const int lo = c * kChunk;
      const int hi = std::min(bsz, lo + kChunk);
      for (int i = lo; i < hi; ++i) {
        const int idx = batch[i];
        const auto trace = model_.forward(images_[idx]);
        auto ce = classification_loss<T>(trace.logits, train_[idx].label);
        SampleStats& s = stats[i];
        s.ce = ce.loss;
        s.correct = argmax<T>(trace.logits) == train_[idx].label;
        for (auto& x : ce.grad) x *= logit_scale;

        const auto& maps = trace.last_block_similarity;
        std::vector<EntropyResult> ent;
        ent.reserve(heads);
        for (const auto& m : maps) ent.push_back(spatial_entropy(m, cfg_.loss));
        entropy_summary(ent, s);

        std::vector<Grid2D> sim_grads;
        switch (cfg_.aux_loss) {
          case AuxLoss::None:
            break;
          case AuxLoss::SpatialEntropy: {
            s.aux = s.entropy;
            const double scale = aux_scale / heads;
            for (auto& r : ent) {
              std::vector<double> gv(r.gradient.values().begin(), r.gradient.values().end());
              for (double& x : gv) x *= scale;
              sim_grads.emplace_back(k, std::move(gv));
            }
            break;
          }
          case AuxLoss::TotalVariation: {
            auto tv = tv_loss(maps);
            s.aux = tv.loss;
            for (auto& gr : tv.gradients) {
              std::vector<double> gv(gr.values().begin(), gr.values().end());
              for (double& x : gv) x *= aux_scale;
              sim_grads.emplace_back(k, std::move(gv));
            }
            break;
          }
        }
        model_.backward(trace, ce.grad, sim_grads, g);
      }
    } catch (...) {
      errors[c] = std::current_exception();
    }
  }

  std::vector<double> ce_v(bsz), aux_v(bsz);
  for (int i = 0; i < bsz; ++i) {
    ce_v[i] = stats[i].ce;
    aux_v[i] = stats[i].aux;
  }
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NumericFailure) throw;
      dump_batch(batch, ce_v, aux_v, err.what());
      throw Error(ErrorCode::NumericFailure,
                  "non-finite values at step " + std::to_string(step_) + ": " + err.what());
    }
  }

  // Fold the chunk gradients in a fixed order.
  const std::size_t n = model_.parameter_count();
  T* gp = grad_.data();
  std::copy(chunk_grads_[0].begin(), chunk_grads_[0].end(), grad_.begin());
  for (int c = 1; c < chunks; ++c) {
    const T* src = chunk_grads_[c].data();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) gp[i] += src[i];
  }

  StepStats out;
  for (const auto& s : stats) {
    out.ce += s.ce;
    out.aux += s.aux;
    out.accuracy += s.correct ? 1.0 : 0.0;
    out.entropy += s.entropy;
    out.components += s.components;
  }
  const double inv = 1.0 / bsz;
  out.ce *= inv;
  out.aux *= inv;
  out.accuracy *= inv;
  out.entropy *= inv;
  out.components *= inv;
  out.loss = out.ce + cfg_.lambda * out.aux;

  if (!std::isfinite(out.loss) || !all_finite<T>(grad_)) {
    dump_batch(batch, ce_v, aux_v, "non-finite loss or gradient");
    throw Error(ErrorCode::NumericFailure,
                "non-finite loss or gradient at step " + std::to_string(step_));
  }

  // AdamW with decoupled weight decay on weight matrices only.
  const double lr = cosine_lr(cfg_, step_, cfg_.total_steps());
  ++step_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  const double eps = cfg_.adam_eps;
  T* p = model_.parameters().data();
  T* m = m_.data();
  T* v = v_.data();
  const unsigned char* dm = decay_mask_.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gp[i];
    double w = p[i];
    if (dm[i]) w *= decay;
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    w -= lr * (static_cast<double>(m[i]) / bc1) /
         (std::sqrt(static_cast<double>(v[i]) / bc2) + eps);
    p[i] = static_cast<T>(w);
  }
  out.lr = lr;

  epoch_sum_.ce += out.ce * bsz;
  epoch_sum_.aux += out.aux * bsz;
  epoch_sum_.accuracy += out.accuracy * bsz;
  epoch_sum_.entropy += out.entropy * bsz;
  epoch_sum_.components += out.components * bsz;
  epoch_sum_.lr = lr;
  epoch_batches_ += bsz;

  cursor_ += bsz;
  if (cursor_ >= n_total) {
    cursor_ = 0;
    ++epoch_;
  }
  return out;
}

template <class T>
EpochRecord Trainer<T>::run_epoch() {
  do {
    step();
  } while (cursor_ != 0);

  EpochRecord r;
  r.epoch = epoch_;
  r.step = step_;
  r.lr = epoch_sum_.lr;
  const double inv = 1.0 / epoch_batches_;
  r.ce = epoch_sum_.ce * inv;
  r.aux = epoch_sum_.aux * inv;
  r.loss = r.ce + cfg_.lambda * r.aux;
  r.accuracy = epoch_sum_.accuracy * inv;
  r.entropy = epoch_sum_.entropy * inv;
  r.components = epoch_sum_.components * inv;
  epoch_sum_ = {};
  epoch_batches_ = 0;
  return r;
}

template class Trainer<float>;
template class Trainer<double>;

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct EvalSample {
  double ce = 0.0;
  bool correct = false;
  int predicted = 0;
  double entropy = 0.0;
  double components = 0.0;
  HeadScore best{0, 0.0};
};

template <class T>
std::vector<EvalSample> eval_samples(const VisionTransformer<T>& model,
                                     std::span<const ShapeSample> data, const LossConfig& loss,
                                     double fraction) {
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "cannot evaluate an empty dataset");
  const int n = static_cast<int>(data.size());
  const int heads = model.config().heads;
  std::vector<EvalSample> out(n);
  std::vector<std::exception_ptr> errors(n);

#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < n; ++i) {
    try {
      const auto image = to_precision<T>(data[i].image);
      const auto trace = model.forward(image);
      EvalSample& s = out[i];
      s.ce = classification_loss<T>(trace.logits, data[i].label).loss;
      s.predicted = argmax<T>(trace.logits);
      s.correct = s.predicted == data[i].label;
      double h = 0.0, c = 0.0;
      for (const auto& m : trace.last_block_similarity) {
        const auto r = spatial_entropy(m, loss);
        h += r.entropy;
        c += r.components.count;
      }
      s.entropy = h / heads;
      s.components = c / heads;
      std::vector<Grid2D> attn;
      attn.reserve(heads);
      for (int hh = 0; hh < heads; ++hh) attn.push_back(trace.cls_attention(hh));
      s.best = best_head_jaccard(attn, data[i].mask, fraction);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

template <class T>
EvalMetrics evaluate(const VisionTransformer<T>& model, std::span<const ShapeSample> data,
                     const LossConfig& loss, double jaccard_fraction) {
  const auto samples = eval_samples(model, data, loss, jaccard_fraction);
  EvalMetrics m;
  m.samples = static_cast<int>(samples.size());
  for (const auto& s : samples) {
    m.loss += s.ce;
    m.accuracy += s.correct ? 1.0 : 0.0;
    m.entropy += s.entropy;
    m.components += s.components;
    m.jaccard += s.best.score;
  }
  const double inv = 1.0 / m.samples;
  m.loss *= inv;
  m.accuracy *= inv;
  m.entropy *= inv;
  m.components *= inv;
  m.jaccard *= inv;
  return m;
}

template <class T>
std::vector<ImageScore> jaccard_scores(const VisionTransformer<T>& model,
                                       std::span<const ShapeSample> data, double fraction) {
  const auto samples = eval_samples(model, data, LossConfig{}, fraction);
  std::vector<ImageScore> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back({static_cast<int>(i), data[i].label, samples[i].predicted, samples[i].best.head,
                   samples[i].best.score});
  }
  return out;
}

template EvalMetrics evaluate<float>(const VisionTransformer<float>&, std::span<const ShapeSample>,
                                     const LossConfig&, double);
template EvalMetrics evaluate<double>(const VisionTransformer<double>&,
                                      std::span<const ShapeSample>, const LossConfig&, double);
template std::vector<ImageScore> jaccard_scores<float>(const VisionTransformer<float>&,
                                                       std::span<const ShapeSample>, double);
template std::vector<ImageScore> jaccard_scores<double>(const VisionTransformer<double>&,
                                                        std::span<const ShapeSample>, double);

// ---------------------------------------------------------------------------
// Full runs

namespace {

template <class T>
RunResult run_impl(const TrainConfig& cfg, const RunOptions& opts) {
  auto train = generate_dataset(cfg.dataset, derive_seed(cfg.seed, Stream::TrainData));
  std::vector<ShapeSample> test;
  if (cfg.test_samples > 0) {
    DatasetSpec ts = cfg.dataset;
    ts.samples = cfg.test_samples;
    test = generate_dataset(ts, derive_seed(cfg.seed, Stream::TestData));
  }

  Trainer<T> trainer(cfg, std::move(train));
  RunResult result;

  const bool write = !opts.out_dir.empty();
  std::optional<RunLogWriter> log;
  if (write) {
    std::filesystem::create_directories(opts.out_dir);
    const auto log_path = opts.out_dir / "run_log.jsonl";
    if (!opts.resume) std::ofstream(log_path, std::ios::trunc);
    log.emplace(log_path);
    trainer.set_dump_path(opts.out_dir / "nan_dump.json");
  }
  if (opts.resume) {
    const Checkpoint ck = load_checkpoint(*opts.resume);
    if (!(ck.config.model == cfg.model) || ck.precision != cfg.precision) {
      throw Error(ErrorCode::CheckpointFormat,
                  "checkpoint model or precision does not match the configuration");
    }
    restore_trainer(ck, trainer);
  }

  const auto save = [&](const std::filesystem::path& p) {
    save_checkpoint(p, trainer);
    if (std::find(result.outputs.begin(), result.outputs.end(), p) == result.outputs.end()) {
      result.outputs.push_back(p);
    }
  };

  while (trainer.epoch() < cfg.epochs) {
    EpochRecord rec = trainer.run_epoch();
    const bool last = rec.epoch == cfg.epochs;
    if (!test.empty() && (last || (cfg.eval_every > 0 && rec.epoch % cfg.eval_every == 0))) {
      rec.test = evaluate(trainer.model(), std::span<const ShapeSample>(test), cfg.loss,
                          cfg.jaccard_fraction);
    }
    if (log) log->append(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    result.log.push_back(rec);
    if (write) {
      if (cfg.checkpoint_every > 0 && rec.epoch % cfg.checkpoint_every == 0 && !last) {
        save(opts.out_dir / ("checkpoint_epoch" + std::to_string(rec.epoch) + ".bin"));
      }
      if (last) save(opts.out_dir / "checkpoint.bin");
    }
  }
  if (log) result.outputs.insert(result.outputs.begin(), log->path());
  return result;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  return cfg.precision == Precision::Float32 ? run_impl<float>(cfg, opts)
                                             : run_impl<double>(cfg, opts);
}

}  // namespace sar
