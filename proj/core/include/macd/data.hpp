#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <set>
#include <string_view>
#include <vector>

#include "macd/types.hpp"

namespace macd {

enum class NliLabel { Entailment, Neutral, Contradiction };

std::string_view to_string(NliLabel label);
NliLabel parse_label(std::string_view s);

struct EvalPair {
  TokenSequence s1;
  TokenSequence s2;
  std::optional<double> gold_score;
  std::optional<NliLabel> gold_label;
  friend bool operator==(const EvalPair&, const EvalPair&) = default;
};

struct SynthConfig {
  std::size_t num_contexts = 8;
  std::size_t pairs_per_context = 64;
  std::size_t vocab_size = 64;
  std::size_t tokens_per_sentence = 8;
  std::size_t grid_side = 2;
  std::size_t patch_width = 8;
  double noise_scale = 0.1;
  // Size of each context's private token subset and the probability mass on it.
  std::size_t context_vocab = 4;
  double context_mass = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

// The latent structure behind a synthetic corpus: per context, a private token
// subset and a patch prototype (M^2 x patch_width).
struct SyntheticWorld {
  SynthConfig config;
  std::vector<std::vector<int>> context_tokens;
  std::vector<DenseMatrix> prototypes;
};

SyntheticWorld make_world(const SynthConfig& config);
TokenSequence sample_sentence(const SyntheticWorld& world, std::size_t context, std::mt19937_64& rng);
PatchGrid sample_image(const SyntheticWorld& world, std::size_t context, std::mt19937_64& rng);

// pairs_per_context samples for every context, interleaved by context.
Corpus sample_corpus(const SyntheticWorld& world, std::size_t pairs_per_context, std::uint64_t seed);
Corpus gen_synthetic(const SynthConfig& config);

// Similarity pairs: half share a context (score 1), half do not (score 0).
std::vector<EvalPair> gen_synthetic_sts(const SyntheticWorld& world, std::size_t n_pairs,
                                        std::uint64_t seed);
// Inference pairs, per_label of each: entailment = s1 with one token resampled
// from its context, neutral = an independent sentence from the same context,
// contradiction = a sentence from another context.
std::vector<EvalPair> gen_synthetic_nli(const SyntheticWorld& world, std::size_t per_label,
                                        std::uint64_t seed);

// JSON-lines readers/writers. Blank lines are skipped; errors name the line.
Corpus read_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

std::vector<EvalPair> read_eval(std::istream& in);
std::vector<EvalPair> load_eval(const std::filesystem::path& path);
void write_eval(std::ostream& out, const std::vector<EvalPair>& pairs);
void save_eval(const std::filesystem::path& path, const std::vector<EvalPair>& pairs);

// Drops pairs whose s1 or s2 exactly equals an excluded sentence.
std::vector<EvalPair> filter_overlap(const std::vector<EvalPair>& pairs,
                                     const std::set<TokenSequence>& exclusion);

using Batch = std::vector<std::size_t>;

// Seeded shuffle of [0, corpus_size) followed by contiguous slicing.
std::vector<Batch> make_batches(std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed,
                                bool drop_last = true);
std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed,
                                bool drop_last = true);

}  // namespace macd
