#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sar/dataset.hpp"
#include "sar/entropy.hpp"
#include "sar/vit.hpp"

namespace sar {

enum class AuxLoss { None, SpatialEntropy, TotalVariation };
enum class Precision { Float32, Float64 };

std::string_view to_string(AuxLoss a);
AuxLoss parse_aux_loss(std::string_view name);
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view name);

struct TrainConfig {
  double lambda = 0.01;
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-3;
  double min_lr = 1e-6;  // learning rate at the last step
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  AuxLoss aux_loss = AuxLoss::SpatialEntropy;
  Precision precision = Precision::Float32;
  LossConfig loss;
  ViTConfig model = [] {
    ViTConfig m;
    m.last_block = BlockVariant::NoMsaSkipNoLn;
    return m;
  }();
  DatasetSpec dataset;
  int test_samples = 500;
  int eval_every = 1;         // epochs between test evaluations; 0 = only after the last
  int checkpoint_every = 0;   // epochs between checkpoints; 0 = only after the last
  double jaccard_fraction = 0.6;

  /// Throws InvalidArgument on inconsistent settings (including a dataset
  /// whose image/patch size disagrees with the model).
  void validate() const;
  int steps_per_epoch() const;
  long total_steps() const;
};

/// Cosine decay from cfg.lr at step 0 to cfg.min_lr at step total-1.
double cosine_lr(const TrainConfig& cfg, long step, long total);

/// Seeds for the independent random streams of a run, all derived from cfg.seed.
enum class Stream : std::uint64_t { Init = 1, TrainData = 2, TestData = 3, Shuffle = 4 };
std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0);

struct EvalMetrics {
  int samples = 0;
  double loss = 0.0;        // cross-entropy
  double accuracy = 0.0;
  double entropy = 0.0;     // mean over samples and heads, last block
  double components = 0.0;  // mean h_r
  double jaccard = 0.0;     // mean per-image best-head Jaccard
  bool operator==(const EvalMetrics&) const = default;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  long step = 0;  // optimizer steps taken so far
  double lr = 0.0;
  double loss = 0.0;  // ce + lambda * aux
  double ce = 0.0;
  double aux = 0.0;
  double accuracy = 0.0;
  double entropy = 0.0;
  double components = 0.0;
  std::optional<EvalMetrics> test;
  bool operator==(const EpochRecord&) const = default;
};

/// JSON lines, one record per epoch.
std::string to_json_line(const EpochRecord& r);
EpochRecord parse_json_line(std::string_view line);
std::vector<EpochRecord> read_run_log(const std::filesystem::path& path);

/// Append-only writer for a run log.
class RunLogWriter {
 public:
  explicit RunLogWriter(std::filesystem::path path);
  void append(const EpochRecord& r);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct StepStats {
  double loss = 0.0;
  double ce = 0.0;
  double aux = 0.0;
  double accuracy = 0.0;
  double entropy = 0.0;
  double components = 0.0;
  double lr = 0.0;
};

/// Mini-batch AdamW trainer. Each sample contributes (ce + lambda * aux) / B;
/// per-sample work runs in parallel over fixed chunks whose gradients are
/// summed in chunk order, so results do not depend on the thread count.
template <class T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<ShapeSample> train);

  const TrainConfig& config() const { return cfg_; }
  VisionTransformer<T>& model() { return model_; }
  const VisionTransformer<T>& model() const { return model_; }

  long step_count() const { return step_; }
  int epoch() const { return epoch_; }
  std::span<const T> adam_m() const { return m_; }
  std::span<const T> adam_v() const { return v_; }

  /// Restore optimizer state (e.g. from a checkpoint).
  void restore(std::span<const T> params, std::span<const T> m, std::span<const T> v, long step,
               int epoch);

  /// One optimizer step on the next batch of the current epoch's order.
  StepStats step();
  /// Run the remaining steps of the current epoch and return the averaged stats.
  EpochRecord run_epoch();

  /// Where to write a diagnostic dump if a loss goes non-finite.
  void set_dump_path(std::filesystem::path p) { dump_path_ = std::move(p); }

 private:
  void shuffle_epoch();
  void dump_batch(std::span<const int> batch, std::span<const double> ce,
                  std::span<const double> aux, const std::string& reason) const;

  TrainConfig cfg_;
  std::vector<ShapeSample> train_;
  std::vector<std::vector<T>> images_;
  VisionTransformer<T> model_;
  std::vector<T> m_, v_;
  std::vector<std::vector<T>> chunk_grads_;
  std::vector<T> grad_;
  std::vector<unsigned char> decay_mask_;
  std::vector<int> order_;
  long step_ = 0;
  int epoch_ = 0;      // completed epochs
  int cursor_ = 0;     // position inside order_
  StepStats epoch_sum_;
  int epoch_batches_ = 0;
  std::filesystem::path dump_path_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

/// Forward every sample and collect test metrics. Pure; throws on an empty set.
template <class T>
EvalMetrics evaluate(const VisionTransformer<T>& model, std::span<const ShapeSample> data,
                     const LossConfig& loss = {}, double jaccard_fraction = 0.6);

/// Per-image details used by the eval-jaccard command.
struct ImageScore {
  int index = 0;
  int label = 0;
  int predicted = 0;
  int best_head = 0;
  double jaccard = 0.0;
};

template <class T>
std::vector<ImageScore> jaccard_scores(const VisionTransformer<T>& model,
                                       std::span<const ShapeSample> data, double fraction);

/// Convert a double image to the model's precision.
template <class T>
std::vector<T> to_precision(std::span<const double> v) {
  return std::vector<T>(v.begin(), v.end());
}

struct RunOptions {
  std::filesystem::path out_dir;                 // empty: write nothing
  std::optional<std::filesystem::path> resume;   // checkpoint to continue from
  std::function<void(const EpochRecord&)> on_epoch;
};

struct RunResult {
  std::vector<EpochRecord> log;
  std::vector<std::filesystem::path> outputs;  // files written under out_dir
};

/// Generate data from cfg, train for cfg.epochs, evaluate, checkpoint and log.
RunResult run_training(const TrainConfig& cfg, const RunOptions& opts = {});

}  // namespace sar
