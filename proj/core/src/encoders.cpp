#include "macd/encoders.hpp"

#include <cmath>
#include <random>

#include "macd/errors.hpp"

namespace macd {

std::string_view to_string(Mixing m) {
  switch (m) {
    case Mixing::None: return "none";
    case Mixing::MeanResidual: return "mean-residual";
    case Mixing::SelfAttention: return "self-attention";
  }
  return "?";
}

std::string_view to_string(Aggregation a) { return a == Aggregation::Slot ? "slot" : "mean"; }
std::string_view to_string(Pooling p) { return p == Pooling::Mean ? "mean" : "max"; }

Mixing parse_mixing(std::string_view s) {
  if (s == "none") return Mixing::None;
  if (s == "mean-residual") return Mixing::MeanResidual;
  if (s == "self-attention") return Mixing::SelfAttention;
  throw ConfigError("unknown mixing mode: " + std::string(s));
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "slot") return Aggregation::Slot;
  if (s == "mean") return Aggregation::Mean;
  throw ConfigError("unknown aggregation mode: " + std::string(s));
}

Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "max") return Pooling::Max;
  throw ConfigError("unknown pooling mode: " + std::string(s));
}

void TextEncoderConfig::validate() const {
  if (vocab_size == 0 || embed_dim == 0 || shared_dim == 0 || max_length == 0)
    throw ConfigError("text encoder: sizes must be positive");
  if (identity_projection && embed_dim != shared_dim)
    throw ConfigError("text encoder: identity projection needs embed_dim == shared_dim");
  if (aggregation == Aggregation::Slot && mixing == Mixing::None)
    throw ConfigError("text encoder: slot aggregation without mixing ignores the input");
}

void ImageEncoderConfig::validate() const {
  if (patch_width == 0 || shared_dim == 0) throw ConfigError("image encoder: sizes must be positive");
}

void EncoderConfig::validate() const {
  text.validate();
  image.validate();
  if (text.shared_dim != image.shared_dim)
    throw ConfigError("encoders: text and image shared_dim differ");
}

namespace {

DenseMatrix uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

DenseMatrix glorot(std::size_t fan_out, std::size_t fan_in, std::mt19937_64& rng) {
  return uniform(fan_out, fan_in, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

}  // namespace

EncoderParams init_encoders(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const TextEncoderConfig& tc = config.text;
  EncoderParams p;
  p.text.config = tc;
  p.text.embedding = uniform(tc.vocab_size, tc.embed_dim, 0.1, rng);
  if (tc.aggregation == Aggregation::Slot) p.text.slot = uniform(tc.embed_dim, 1, 0.1, rng);
  if (tc.positional) p.text.positional = uniform(tc.max_length, tc.embed_dim, 0.1, rng);
  if (tc.mixing == Mixing::SelfAttention) {
    p.text.query = glorot(tc.embed_dim, tc.embed_dim, rng);
    p.text.key = glorot(tc.embed_dim, tc.embed_dim, rng);
    p.text.value = glorot(tc.embed_dim, tc.embed_dim, rng);
  }
  if (!tc.identity_projection) {
    p.text.projection = glorot(tc.shared_dim, tc.embed_dim, rng);
    p.text.bias = DenseMatrix(tc.shared_dim, 1);
  }
  const ImageEncoderConfig& ic = config.image;
  p.image.config = ic;
  p.image.projection = glorot(ic.shared_dim, ic.patch_width, rng);
  p.image.bias = DenseMatrix(ic.shared_dim, 1);
  return p;
}

TeacherSnapshot take_snapshot(const EncoderParams& params) { return TeacherSnapshot{params.text}; }

void validate_tokens(const TokenSequence& x, const TextEncoderConfig& config) {
  if (x.empty()) throw InputError("token sequence is empty");
  if (x.size() > config.max_length) throw InputError("token sequence exceeds max_length");
  for (int id : x)
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
      throw InputError("token id " + std::to_string(id) + " outside vocabulary");
}

namespace {

ad::Var bind_one(ad::Tape& tape, const DenseMatrix& m, bool trainable) {
  if (m.empty()) return {};
  return trainable ? tape.variable(m) : tape.constant(m);
}

}  // namespace

TextParamVars bind(ad::Tape& tape, const TextEncoderParams& params, bool trainable) {
  TextParamVars v;
  v.config = &params.config;
  v.embedding = bind_one(tape, params.embedding, trainable);
  v.slot = bind_one(tape, params.slot, trainable);
  v.positional = bind_one(tape, params.positional, trainable);
  v.query = bind_one(tape, params.query, trainable);
  v.key = bind_one(tape, params.key, trainable);
  v.value = bind_one(tape, params.value, trainable);
  v.projection = bind_one(tape, params.projection, trainable);
  v.bias = bind_one(tape, params.bias, trainable);
  return v;
}

ImageParamVars bind(ad::Tape& tape, const ImageEncoderParams& params, bool trainable) {
  ImageParamVars v;
  v.config = &params.config;
  v.projection = bind_one(tape, params.projection, trainable);
  v.bias = bind_one(tape, params.bias, trainable);
  return v;
}

TextFeatureVars encode_text([[maybe_unused]] ad::Tape& tape, const TokenSequence& x,
                            const TextParamVars& p) {
  const TextEncoderConfig& cfg = *p.config;
  validate_tokens(x, cfg);
  const std::size_t len = x.size();

  ad::Var h = ad::gather_rows_as_cols(p.embedding, x);
  if (cfg.positional) {
    std::vector<int> positions(len);
    for (std::size_t i = 0; i < len; ++i) positions[i] = static_cast<int>(i);
    h = ad::add(h, ad::gather_rows_as_cols(p.positional, positions));
  }
  const bool slot = cfg.aggregation == Aggregation::Slot;
  if (slot) h = ad::concat_cols(p.slot, h);

  switch (cfg.mixing) {
    case Mixing::None:
      break;
    case Mixing::MeanResidual:
      h = ad::add_col(h, ad::mean_cols(h));
      break;
    case Mixing::SelfAttention: {
      // Column i attends over all columns k with weight softmax_k(key_k . query_i / sqrt(e)).
      const ad::Var q = ad::matmul(p.query, h);
      const ad::Var k = ad::matmul(p.key, h);
      const ad::Var v = ad::matmul(p.value, h);
      const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
      const ad::Var weights = ad::softmax_cols(ad::scale(ad::matmul(ad::transpose(k), q), scale));
      h = ad::add(h, ad::matmul(v, weights));
      break;
    }
  }

  ad::Var out = cfg.identity_projection ? h : ad::add_col(ad::matmul(p.projection, h), p.bias);
  if (slot) return {ad::slice_cols(out, 1, len), ad::slice_cols(out, 0, 1)};
  return {out, ad::mean_cols(out)};
}

ImageFeatureVars encode_image(ad::Tape& tape, const PatchGrid& y, const ImageParamVars& p) {
  const ImageEncoderConfig& cfg = *p.config;
  if (y.count() == 0) throw InputError("patch grid is empty");
  if (y.width() != cfg.patch_width)
    throw InputError("patch width " + std::to_string(y.width()) + " does not match encoder width " +
                     std::to_string(cfg.patch_width));
  if (y.side * y.side != y.count()) throw InputError("patch grid is not side x side");
  const ad::Var raw = tape.constant(y.patches.transposed());
  const ad::Var patch = ad::add_col(ad::matmul(p.projection, raw), p.bias);
  const ad::Var global = cfg.pooling == Pooling::Mean ? ad::mean_cols(patch) : ad::max_cols(patch);
  return {patch, global};
}

TextFeatures encode_text(const TokenSequence& x, const TextEncoderParams& params) {
  ad::Tape tape;
  const TextFeatureVars f = encode_text(tape, x, bind(tape, params, false));
  return {f.word.value(), f.global.value()};
}

ImageFeatures encode_image(const PatchGrid& y, const ImageEncoderParams& params) {
  ad::Tape tape;
  const ImageFeatureVars f = encode_image(tape, y, bind(tape, params, false));
  return {f.patch.value(), f.global.value()};
}

TextFeatures teacher_encode(const TokenSequence& x, const TeacherSnapshot& snapshot) {
  return encode_text(x, snapshot.text);
}

TextFeatureVars place(ad::Tape& tape, const TextFeatures& f, bool trainable) {
  return {trainable ? tape.variable(f.word) : tape.constant(f.word),
          trainable ? tape.variable(f.global) : tape.constant(f.global)};
}

ImageFeatureVars place(ad::Tape& tape, const ImageFeatures& f, bool trainable) {
  return {trainable ? tape.variable(f.patch) : tape.constant(f.patch),
          trainable ? tape.variable(f.global) : tape.constant(f.global)};
}

}  // namespace macd
