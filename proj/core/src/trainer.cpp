#include "macd/trainer.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "macd/errors.hpp"

namespace macd {

using nlohmann::json;

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer: " + std::string(s));
}

void TrainConfig::validate() const {
  weights.validate();
  encoder.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (grad_accumulation_steps < 1) throw ConfigError("grad_accumulation_steps must be at least 1");
}

std::string to_json(const TrainConfig& c) {
  const auto& w = c.weights;
  const auto& t = c.encoder.text;
  const auto& i = c.encoder.image;
  json j{
      {"weights",
       {{"tau_sigma", w.tau_sigma},
        {"tau_c", w.tau_c},
        {"tau_prime", w.tau_prime},
        {"epsilon", w.epsilon},
        {"gamma", w.gamma},
        {"beta", w.beta},
        {"anchor_direction", std::string(to_string(w.anchor_direction))}}},
      {"encoder",
       {{"vocab_size", t.vocab_size},
        {"embed_dim", t.embed_dim},
        {"shared_dim", t.shared_dim},
        {"max_length", t.max_length},
        {"mixing", std::string(to_string(t.mixing))},
        {"aggregation", std::string(to_string(t.aggregation))},
        {"positional", t.positional},
        {"identity_projection", t.identity_projection},
        {"patch_width", i.patch_width},
        {"pooling", std::string(to_string(i.pooling))}}},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"epochs", c.epochs},
      {"grad_accumulation_steps", c.grad_accumulation_steps},
      {"optimizer", std::string(to_string(c.optimizer))},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"seed", c.seed},
      {"drop_last", c.drop_last},
      {"checkpoint_path", c.checkpoint_path},
  };
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    if (j.contains("weights")) {
      const json& w = j["weights"];
      c.weights.tau_sigma = w.value("tau_sigma", c.weights.tau_sigma);
      c.weights.tau_c = w.value("tau_c", c.weights.tau_c);
      c.weights.tau_prime = w.value("tau_prime", c.weights.tau_prime);
      c.weights.epsilon = w.value("epsilon", c.weights.epsilon);
      c.weights.gamma = w.value("gamma", c.weights.gamma);
      c.weights.beta = w.value("beta", c.weights.beta);
      if (w.contains("anchor_direction"))
        c.weights.anchor_direction = parse_anchor_direction(w["anchor_direction"].get<std::string>());
    }
    if (j.contains("encoder")) {
      const json& e = j["encoder"];
      auto& t = c.encoder.text;
      auto& i = c.encoder.image;
      t.vocab_size = e.value("vocab_size", t.vocab_size);
      t.embed_dim = e.value("embed_dim", t.embed_dim);
      t.shared_dim = e.value("shared_dim", t.shared_dim);
      i.shared_dim = t.shared_dim;
      t.max_length = e.value("max_length", t.max_length);
      if (e.contains("mixing")) t.mixing = parse_mixing(e["mixing"].get<std::string>());
      if (e.contains("aggregation"))
        t.aggregation = parse_aggregation(e["aggregation"].get<std::string>());
      t.positional = e.value("positional", t.positional);
      t.identity_projection = e.value("identity_projection", t.identity_projection);
      i.patch_width = e.value("patch_width", i.patch_width);
      if (e.contains("pooling")) i.pooling = parse_pooling(e["pooling"].get<std::string>());
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.grad_accumulation_steps = j.value("grad_accumulation_steps", c.grad_accumulation_steps);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.drop_last = j.value("drop_last", c.drop_last);
    c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  return c;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  // splitmix64 finaliser over (seed, epoch)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string format_log_line(std::uint64_t step, std::size_t epoch, const LossBreakdown& loss) {
  json j{{"step", step},
         {"epoch", epoch},
         {"l_global", loss.l_global},
         {"l_local", loss.l_local},
         {"l_anchor", loss.l_anchor},
         {"total", loss.total}};
  return j.dump();
}

namespace {

std::vector<ad::Var> param_vars(const TextParamVars& t, const ImageParamVars& i) {
  return {t.embedding, t.slot, t.positional, t.query, t.key,
          t.value,     t.projection, t.bias, i.projection, i.bias};
}

std::vector<DenseMatrix> zeros_like(const EncoderParams& p) {
  std::vector<DenseMatrix> out;
  p.for_each_tensor([&](std::string_view, const DenseMatrix& m) { out.emplace_back(m.rows(), m.cols()); });
  return out;
}

}  // namespace

BatchGradient batch_gradient(const Corpus& corpus, const Batch& batch, const EncoderParams& params,
                             std::span<const TextFeatures> teacher_features,
                             const LossWeights& weights) {
  ad::Tape tape;
  const TextParamVars tv = bind(tape, params.text, true);
  const ImageParamVars iv = bind(tape, params.image, true);
  std::vector<TextFeatureVars> texts;
  std::vector<ImageFeatureVars> images;
  std::vector<TextFeatures> teachers;
  texts.reserve(batch.size());
  images.reserve(batch.size());
  teachers.reserve(batch.size());
  for (std::size_t idx : batch) {
    const PairedSample& s = corpus.samples.at(idx);
    texts.push_back(encode_text(tape, s.text, tv));
    images.push_back(encode_image(tape, s.image, iv));
    teachers.push_back(teacher_features[idx]);
  }
  const graph::LossVars loss = graph::total_loss(texts, images, teachers, weights);
  BatchGradient out;
  out.loss = loss.values();
  if (!std::isfinite(out.loss.total)) return out;
  tape.backward(loss.total);

  out.grads = zeros_like(params);
  const std::vector<ad::Var> vars = param_vars(tv, iv);
  for (std::size_t k = 0; k < vars.size(); ++k) {
    if (!vars[k].valid()) continue;
    const DenseMatrix& g = vars[k].grad();
    if (g.size() == out.grads[k].size()) out.grads[k] = g;
  }
  return out;
}

Trainer::Trainer(const Corpus& corpus, TrainConfig config)
    : corpus_(corpus), config_(std::move(config)) {
  config_.validate();
  params_ = init_encoders(config_.encoder, config_.seed);
  teacher_ = take_snapshot(params_);
  opt_.first_moment = zeros_like(params_);
  opt_.second_moment = zeros_like(params_);
  opt_.grad_accumulator = zeros_like(params_);
  prepare();
}

Trainer::Trainer(const Corpus& corpus, Checkpoint resume_from)
    : corpus_(corpus),
      config_(std::move(resume_from.config)),
      params_(std::move(resume_from.params)),
      teacher_(std::move(resume_from.teacher)),
      opt_(std::move(resume_from.optimizer)),
      step_(resume_from.step) {
  config_.validate();
  const std::size_t n = zeros_like(params_).size();
  if (opt_.first_moment.size() != n || opt_.second_moment.size() != n ||
      opt_.grad_accumulator.size() != n)
    throw IntegrityError("checkpoint optimizer state does not match the encoder tensors");
  prepare();
}

void Trainer::prepare() {
  if (corpus_.empty()) throw ContractError("training corpus is empty");
  if (config_.drop_last && corpus_.size() < config_.batch_size)
    throw ContractError("corpus smaller than one batch");
  batches_per_epoch_ = config_.drop_last ? corpus_.size() / config_.batch_size
                                         : (corpus_.size() + config_.batch_size - 1) / config_.batch_size;
  teacher_features_.clear();
  teacher_features_.reserve(corpus_.size());
  for (const auto& s : corpus_.samples) teacher_features_.push_back(teacher_encode(s.text, teacher_));
}

const std::vector<Batch>& Trainer::epoch_batches(std::size_t epoch) {
  if (epoch != cached_epoch_) {
    cached_batches_ =
        make_batches(corpus_, config_.batch_size, epoch_seed(config_.seed, epoch), config_.drop_last);
    cached_epoch_ = epoch;
  }
  return cached_batches_;
}

void Trainer::apply_update() {
  if (opt_.accumulated_batches == 0) return;
  const double inv = 1.0 / static_cast<double>(opt_.accumulated_batches);
  const double lr = config_.learning_rate;
  std::size_t k = 0;
  if (config_.optimizer == OptimizerKind::Adam) ++opt_.adam_step;
  const double t = static_cast<double>(opt_.adam_step);
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  params_.for_each_tensor([&](std::string_view, DenseMatrix& p) {
    DenseMatrix& acc = opt_.grad_accumulator[k];
    DenseMatrix& m = opt_.first_moment[k];
    DenseMatrix& v = opt_.second_moment[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = acc[i] * inv;
      if (config_.optimizer == OptimizerKind::Sgd) {
        p[i] -= lr * g;
      } else {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + config_.adam_eps);
      }
      acc[i] = 0.0;
    }
    ++k;
  });
  opt_.accumulated_batches = 0;
}

LossBreakdown Trainer::train_step() {
  if (done()) throw ContractError("training already finished");
  const std::size_t epoch = static_cast<std::size_t>(step_ / batches_per_epoch_);
  const std::size_t index = static_cast<std::size_t>(step_ % batches_per_epoch_);
  const Batch& batch = epoch_batches(epoch)[index];

  BatchGradient bg = batch_gradient(corpus_, batch, params_, teacher_features_, config_.weights);
  if (!std::isfinite(bg.loss.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << step_ << " (epoch " << epoch << ", batch " << index
       << "): global=" << bg.loss.l_global << " local=" << bg.loss.l_local
       << " anchor=" << bg.loss.l_anchor;
    throw NumericalError(os.str());
  }
  for (std::size_t k = 0; k < bg.grads.size(); ++k) {
    DenseMatrix& acc = opt_.grad_accumulator[k];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += bg.grads[k][i];
  }
  ++opt_.accumulated_batches;
  ++step_;
  const bool epoch_end = index + 1 == batches_per_epoch_;
  if (opt_.accumulated_batches >= config_.grad_accumulation_steps || epoch_end) apply_update();
  return bg.loss;
}

std::vector<LossBreakdown> Trainer::run(std::optional<std::size_t> max_steps, std::ostream* log) {
  std::vector<LossBreakdown> history;
  std::size_t taken = 0;
  while (!done() && (!max_steps || taken < *max_steps)) {
    const std::uint64_t s = step_;
    const LossBreakdown loss = train_step();
    history.push_back(loss);
    if (log) *log << format_log_line(s, static_cast<std::size_t>(s / batches_per_epoch_), loss) << '\n';
    ++taken;
  }
  return history;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = config_;
  c.params = params_;
  c.teacher = teacher_;
  c.optimizer = opt_;
  c.step = step_;
  return c;
}

TrainResult train(const Corpus& corpus, const TrainConfig& config, std::ostream* log) {
  Trainer trainer(corpus, config);
  TrainResult result;
  result.history = trainer.run(std::nullopt, log);
  result.checkpoint = trainer.checkpoint();
  if (!config.checkpoint_path.empty()) save_checkpoint(result.checkpoint, config.checkpoint_path);
  return result;
}

}  // namespace macd
