#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "macd/autodiff.hpp"
#include "macd/types.hpp"

namespace macd {

enum class Mixing { None, MeanResidual, SelfAttention };
enum class Aggregation { Slot, Mean };
enum class Pooling { Mean, Max };

std::string_view to_string(Mixing m);
std::string_view to_string(Aggregation a);
std::string_view to_string(Pooling p);
Mixing parse_mixing(std::string_view s);
Aggregation parse_aggregation(std::string_view s);
Pooling parse_pooling(std::string_view s);

struct TextEncoderConfig {
  std::size_t vocab_size = 64;
  std::size_t embed_dim = 32;
  std::size_t shared_dim = 32;
  std::size_t max_length = 64;
  Mixing mixing = Mixing::SelfAttention;
  Aggregation aggregation = Aggregation::Slot;
  bool positional = false;
  // Skip the output projection entirely (requires embed_dim == shared_dim).
  bool identity_projection = false;

  void validate() const;
  friend bool operator==(const TextEncoderConfig&, const TextEncoderConfig&) = default;
};

struct ImageEncoderConfig {
  std::size_t patch_width = 8;
  std::size_t shared_dim = 32;
  Pooling pooling = Pooling::Mean;

  void validate() const;
  friend bool operator==(const ImageEncoderConfig&, const ImageEncoderConfig&) = default;
};

struct EncoderConfig {
  TextEncoderConfig text;
  ImageEncoderConfig image;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Text encoder f: embedding lookup, one mixing layer, projection to shared_dim.
// Matrices that the configuration does not use are left empty.
struct TextEncoderParams {
  TextEncoderConfig config;
  DenseMatrix embedding;   // vocab_size x embed_dim
  DenseMatrix slot;        // embed_dim x 1, aggregate slot prepended to the sequence
  DenseMatrix positional;  // max_length x embed_dim
  DenseMatrix query;       // embed_dim x embed_dim
  DenseMatrix key;
  DenseMatrix value;
  DenseMatrix projection;  // shared_dim x embed_dim
  DenseMatrix bias;        // shared_dim x 1

  template <class F>
  void for_each_tensor(F&& f) { visit(*this, f); }
  template <class F>
  void for_each_tensor(F&& f) const { visit(*this, f); }

  friend bool operator==(const TextEncoderParams&, const TextEncoderParams&) = default;

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("text.embedding", self.embedding);
    f("text.slot", self.slot);
    f("text.positional", self.positional);
    f("text.query", self.query);
    f("text.key", self.key);
    f("text.value", self.value);
    f("text.projection", self.projection);
    f("text.bias", self.bias);
  }
};

// Image encoder g: per-patch affine projection, then pooling for the global feature.
struct ImageEncoderParams {
  ImageEncoderConfig config;
  DenseMatrix projection;  // shared_dim x patch_width
  DenseMatrix bias;        // shared_dim x 1

  template <class F>
  void for_each_tensor(F&& f) { visit(*this, f); }
  template <class F>
  void for_each_tensor(F&& f) const { visit(*this, f); }

  friend bool operator==(const ImageEncoderParams&, const ImageEncoderParams&) = default;

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f("image.projection", self.projection);
    f("image.bias", self.bias);
  }
};

struct EncoderParams {
  TextEncoderParams text;
  ImageEncoderParams image;

  EncoderConfig config() const { return {text.config, image.config}; }

  template <class F>
  void for_each_tensor(F&& f) {
    text.for_each_tensor(f);
    image.for_each_tensor(f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    text.for_each_tensor(f);
    image.for_each_tensor(f);
  }
  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

// Frozen copy of the text encoder used as the distillation teacher f'.
struct TeacherSnapshot {
  TextEncoderParams text;
  friend bool operator==(const TeacherSnapshot&, const TeacherSnapshot&) = default;
};

// Embeddings ~ U[-0.1, 0.1]; projections and attention weights use a Glorot
// uniform bound; biases start at zero.
EncoderParams init_encoders(const EncoderConfig& config, std::uint64_t seed);

TeacherSnapshot take_snapshot(const EncoderParams& params);

void validate_tokens(const TokenSequence& x, const TextEncoderConfig& config);

// Value-level encoders. encode_text never sees image data.
TextFeatures encode_text(const TokenSequence& x, const TextEncoderParams& params);
ImageFeatures encode_image(const PatchGrid& y, const ImageEncoderParams& params);
TextFeatures teacher_encode(const TokenSequence& x, const TeacherSnapshot& snapshot);

// Differentiable variants recorded on a tape.
struct TextFeatureVars {
  ad::Var word;
  ad::Var global;
};

struct ImageFeatureVars {
  ad::Var patch;
  ad::Var global;
};

// Encoder parameters placed on a tape, either as variables or as constants.
struct TextParamVars {
  const TextEncoderConfig* config = nullptr;
  ad::Var embedding, slot, positional, query, key, value, projection, bias;
};

struct ImageParamVars {
  const ImageEncoderConfig* config = nullptr;
  ad::Var projection, bias;
};

TextParamVars bind(ad::Tape& tape, const TextEncoderParams& params, bool trainable);
ImageParamVars bind(ad::Tape& tape, const ImageEncoderParams& params, bool trainable);

TextFeatureVars encode_text(ad::Tape& tape, const TokenSequence& x, const TextParamVars& params);
ImageFeatureVars encode_image(ad::Tape& tape, const PatchGrid& y, const ImageParamVars& params);

// Places precomputed features on a tape (as variables when trainable).
TextFeatureVars place(ad::Tape& tape, const TextFeatures& f, bool trainable);
ImageFeatureVars place(ad::Tape& tape, const ImageFeatures& f, bool trainable);

}  // namespace macd
