#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "macd/data.hpp"
#include "macd/encoders.hpp"
#include "macd/objective.hpp"

namespace macd {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  LossWeights weights;
  EncoderConfig encoder;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::size_t epochs = 10;
  // Gradients are averaged over this many consecutive batches before one update.
  // A window never spans an epoch boundary; a short trailing window is flushed.
  std::size_t grad_accumulation_steps = 8;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool drop_last = true;
  std::string checkpoint_path;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view text);

struct OptimizerState {
  std::uint64_t adam_step = 0;
  std::uint64_t accumulated_batches = 0;
  // One entry per encoder tensor, in EncoderParams::for_each_tensor order.
  std::vector<DenseMatrix> first_moment;
  std::vector<DenseMatrix> second_moment;
  std::vector<DenseMatrix> grad_accumulator;
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  TrainConfig config;
  EncoderParams params;
  TeacherSnapshot teacher;
  OptimizerState optimizer;
  std::uint64_t step = 0;  // batches consumed so far
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(std::string_view bytes);

// Gradient of the total loss on one batch with respect to every encoder
// tensor, in EncoderParams::for_each_tensor order.
struct BatchGradient {
  LossBreakdown loss;
  std::vector<DenseMatrix> grads;
};

BatchGradient batch_gradient(const Corpus& corpus, const Batch& batch, const EncoderParams& params,
                             std::span<const TextFeatures> teacher_features,
                             const LossWeights& weights);

class Trainer {
 public:
  Trainer(const Corpus& corpus, TrainConfig config);
  Trainer(const Corpus& corpus, Checkpoint resume_from);

  std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }
  std::size_t total_steps() const noexcept { return batches_per_epoch_ * config_.epochs; }
  std::uint64_t step() const noexcept { return step_; }
  bool done() const noexcept { return step_ >= total_steps(); }

  // Processes one batch; applies an optimizer update when the accumulation
  // window closes. Throws NumericalError on a non-finite loss.
  LossBreakdown train_step();

  // Runs until done() or until max_steps more batches were consumed. Each
  // batch writes one JSON line to log when given.
  std::vector<LossBreakdown> run(std::optional<std::size_t> max_steps = std::nullopt,
                                 std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  const EncoderParams& params() const noexcept { return params_; }
  const TeacherSnapshot& teacher() const noexcept { return teacher_; }
  const TrainConfig& config() const noexcept { return config_; }

 private:
  void prepare();
  const std::vector<Batch>& epoch_batches(std::size_t epoch);
  void apply_update();

  const Corpus& corpus_;
  TrainConfig config_;
  EncoderParams params_;
  TeacherSnapshot teacher_;
  OptimizerState opt_;
  std::uint64_t step_ = 0;
  std::size_t batches_per_epoch_ = 0;
  std::vector<TextFeatures> teacher_features_;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  std::vector<Batch> cached_batches_;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> history;
};

// Fresh training run; writes the final checkpoint to config.checkpoint_path
// when it is non-empty.
TrainResult train(const Corpus& corpus, const TrainConfig& config, std::ostream* log = nullptr);

std::string format_log_line(std::uint64_t step, std::size_t epoch, const LossBreakdown& loss);

// Epoch e shuffles with this seed.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

}  // namespace macd
