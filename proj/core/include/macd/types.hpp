#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "macd/dense_matrix.hpp"

namespace macd {

// Token ids of one sentence, x^(1..L).
using TokenSequence = std::vector<int>;

// An image split into side x side patches; row k of `patches` is patch k.
struct PatchGrid {
  std::size_t side = 0;
  DenseMatrix patches;  // side^2 x patch_width

  std::size_t count() const noexcept { return patches.rows(); }
  std::size_t width() const noexcept { return patches.cols(); }
  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

struct PairedSample {
  TokenSequence text;
  PatchGrid image;
  std::optional<int> context_id;
  friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

struct Corpus {
  std::vector<PairedSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Per-word features (shared_dim x L) and the sentence feature (shared_dim x 1).
struct TextFeatures {
  DenseMatrix word;
  DenseMatrix global;
};

// Per-patch features (shared_dim x M^2) and the image feature (shared_dim x 1).
struct ImageFeatures {
  DenseMatrix patch;
  DenseMatrix global;
};

}  // namespace macd
