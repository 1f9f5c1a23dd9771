#include "macd/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <json.hpp>

#include "macd/errors.hpp"

namespace macd {

using nlohmann::json;

std::string_view to_string(NliLabel label) {
  switch (label) {
    case NliLabel::Entailment: return "entailment";
    case NliLabel::Neutral: return "neutral";
    case NliLabel::Contradiction: return "contradiction";
  }
  return "?";
}

NliLabel parse_label(std::string_view s) {
  if (s == "entailment") return NliLabel::Entailment;
  if (s == "neutral") return NliLabel::Neutral;
  if (s == "contradiction") return NliLabel::Contradiction;
  throw InputError("unknown label: " + std::string(s));
}

void SynthConfig::validate() const {
  if (num_contexts == 0 || pairs_per_context == 0 || vocab_size == 0 || tokens_per_sentence == 0 ||
      grid_side == 0 || patch_width == 0 || context_vocab == 0)
    throw ConfigError("synth: all counts must be at least 1");
  if (!(noise_scale >= 0.0)) throw ConfigError("synth: noise_scale must be non-negative");
  if (!(context_mass >= 0.0 && context_mass <= 1.0))
    throw ConfigError("synth: context_mass outside [0,1]");
  if (vocab_size < num_contexts * context_vocab)
    throw ConfigError("synth: vocab_size " + std::to_string(vocab_size) + " cannot hold " +
                      std::to_string(num_contexts) + " disjoint subsets of " +
                      std::to_string(context_vocab) + " tokens");
}

SyntheticWorld make_world(const SynthConfig& config) {
  config.validate();
  SyntheticWorld world;
  world.config = config;
  std::mt19937_64 rng(config.seed);

  std::vector<int> vocab(config.vocab_size);
  std::iota(vocab.begin(), vocab.end(), 0);
  std::shuffle(vocab.begin(), vocab.end(), rng);
  for (std::size_t c = 0; c < config.num_contexts; ++c) {
    auto first = vocab.begin() + static_cast<std::ptrdiff_t>(c * config.context_vocab);
    world.context_tokens.emplace_back(first, first + static_cast<std::ptrdiff_t>(config.context_vocab));
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t patches = config.grid_side * config.grid_side;
  for (std::size_t c = 0; c < config.num_contexts; ++c) {
    DenseMatrix proto(patches, config.patch_width);
    for (double& v : proto.values()) v = normal(rng);
    world.prototypes.push_back(std::move(proto));
  }
  return world;
}

TokenSequence sample_sentence(const SyntheticWorld& world, std::size_t context, std::mt19937_64& rng) {
  const SynthConfig& cfg = world.config;
  const auto& own = world.context_tokens.at(context);
  std::bernoulli_distribution use_context(cfg.context_mass);
  std::uniform_int_distribution<std::size_t> pick_own(0, own.size() - 1);
  std::uniform_int_distribution<int> pick_any(0, static_cast<int>(cfg.vocab_size) - 1);
  TokenSequence x(cfg.tokens_per_sentence);
  for (int& t : x) t = use_context(rng) ? own[pick_own(rng)] : pick_any(rng);
  return x;
}

PatchGrid sample_image(const SyntheticWorld& world, std::size_t context, std::mt19937_64& rng) {
  const SynthConfig& cfg = world.config;
  PatchGrid y{cfg.grid_side, world.prototypes.at(context)};
  if (cfg.noise_scale > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_scale);
    for (double& v : y.patches.values()) v += noise(rng);
  }
  return y;
}

Corpus sample_corpus(const SyntheticWorld& world, std::size_t pairs_per_context, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Corpus corpus;
  corpus.samples.reserve(pairs_per_context * world.config.num_contexts);
  for (std::size_t p = 0; p < pairs_per_context; ++p) {
    for (std::size_t c = 0; c < world.config.num_contexts; ++c) {
      PairedSample s;
      s.text = sample_sentence(world, c, rng);
      s.image = sample_image(world, c, rng);
      s.context_id = static_cast<int>(c);
      corpus.samples.push_back(std::move(s));
    }
  }
  return corpus;
}

Corpus gen_synthetic(const SynthConfig& config) {
  const SyntheticWorld world = make_world(config);
  // Sample stream is decorrelated from the stream that built the world.
  return sample_corpus(world, config.pairs_per_context, config.seed ^ 0x9e3779b97f4a7c15ULL);
}

namespace {

std::size_t other_context(std::size_t c, std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, k - 2);
  const std::size_t o = pick(rng);
  return o >= c ? o + 1 : o;
}

}  // namespace

std::vector<EvalPair> gen_synthetic_sts(const SyntheticWorld& world, std::size_t n_pairs,
                                        std::uint64_t seed) {
  const std::size_t k = world.config.num_contexts;
  if (k < 2) throw ConfigError("synthetic similarity pairs need at least two contexts");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<EvalPair> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t c = pick(rng);
    const bool same = i % 2 == 0;
    const std::size_t d = same ? c : other_context(c, k, rng);
    EvalPair p;
    p.s1 = sample_sentence(world, c, rng);
    p.s2 = sample_sentence(world, d, rng);
    p.gold_score = same ? 1.0 : 0.0;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<EvalPair> gen_synthetic_nli(const SyntheticWorld& world, std::size_t per_label,
                                        std::uint64_t seed) {
  const std::size_t k = world.config.num_contexts;
  if (k < 2) throw ConfigError("synthetic inference pairs need at least two contexts");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<EvalPair> out;
  out.reserve(3 * per_label);
  for (std::size_t i = 0; i < per_label; ++i) {
    for (NliLabel label : {NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction}) {
      const std::size_t c = pick(rng);
      EvalPair p;
      p.s1 = sample_sentence(world, c, rng);
      switch (label) {
        case NliLabel::Entailment: {
          p.s2 = p.s1;
          std::uniform_int_distribution<std::size_t> pos(0, p.s2.size() - 1);
          const TokenSequence fresh = sample_sentence(world, c, rng);
          const std::size_t at = pos(rng);
          p.s2[at] = fresh[at];
          break;
        }
        case NliLabel::Neutral:
          p.s2 = sample_sentence(world, c, rng);
          break;
        case NliLabel::Contradiction:
          p.s2 = sample_sentence(world, other_context(c, k, rng), rng);
          break;
      }
      p.gold_label = label;
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---- JSON lines -----------------------------------------------------------

namespace {

TokenSequence parse_tokens(const json& j, std::size_t line, const char* field) {
  if (!j.is_array()) throw ParseError(line, std::string("'") + field + "' must be an array");
  TokenSequence out;
  out.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_number_integer()) throw ParseError(line, std::string("'") + field + "' must hold integers");
    out.push_back(t.get<int>());
  }
  return out;
}

template <class F>
void for_each_line(std::istream& in, F&& f) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");
    f(j, line);
  }
}

json tokens_json(const TokenSequence& x) { return json(x); }

}  // namespace

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::optional<std::pair<std::size_t, std::size_t>> shape;  // (patch count, width)
  for_each_line(in, [&](const json& j, std::size_t line) {
    if (!j.contains("text") || !j.contains("image"))
      throw ParseError(line, "corpus line needs 'text' and 'image'");
    PairedSample s;
    s.text = parse_tokens(j["text"], line, "text");
    const json& img = j["image"];
    if (!img.is_array() || img.empty()) throw ParseError(line, "'image' must be a non-empty array");
    const std::size_t count = img.size();
    std::size_t width = 0;
    std::vector<double> values;
    for (const auto& row : img) {
      if (!row.is_array()) throw ParseError(line, "'image' rows must be arrays");
      if (width == 0) width = row.size();
      if (row.size() != width || width == 0)
        throw SchemaError("line " + std::to_string(line) + ": patches have unequal widths");
      for (const auto& v : row) {
        if (!v.is_number()) throw ParseError(line, "patch values must be numbers");
        values.push_back(v.get<double>());
      }
    }
    std::size_t side = 0;
    while ((side + 1) * (side + 1) <= count) ++side;
    if (side * side != count)
      throw SchemaError("line " + std::to_string(line) + ": patch count " + std::to_string(count) +
                        " is not a square");
    if (shape && (shape->first != count || shape->second != width))
      throw SchemaError("line " + std::to_string(line) + ": patch grid shape differs from line 1");
    shape = std::make_pair(count, width);
    s.image = PatchGrid{side, DenseMatrix(count, width, std::move(values))};
    if (j.contains("context") && !j["context"].is_null()) {
      if (!j["context"].is_number_integer()) throw ParseError(line, "'context' must be an integer");
      s.context_id = j["context"].get<int>();
    }
    corpus.samples.push_back(std::move(s));
  });
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file " + path.string());
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& s : corpus.samples) {
    json img = json::array();
    for (std::size_t r = 0; r < s.image.patches.rows(); ++r) {
      json row = json::array();
      for (std::size_t c = 0; c < s.image.patches.cols(); ++c) row.push_back(s.image.patches(r, c));
      img.push_back(std::move(row));
    }
    json j{{"text", tokens_json(s.text)}, {"image", std::move(img)}};
    if (s.context_id) j["context"] = *s.context_id;
    out << j.dump() << '\n';
  }
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write corpus file " + path.string());
  write_corpus(out, corpus);
}

std::vector<EvalPair> read_eval(std::istream& in) {
  std::vector<EvalPair> pairs;
  for_each_line(in, [&](const json& j, std::size_t line) {
    if (!j.contains("s1") || !j.contains("s2")) throw ParseError(line, "eval line needs 's1' and 's2'");
    EvalPair p;
    p.s1 = parse_tokens(j["s1"], line, "s1");
    p.s2 = parse_tokens(j["s2"], line, "s2");
    const bool has_score = j.contains("score");
    const bool has_label = j.contains("label");
    if (has_score == has_label) throw ParseError(line, "exactly one of 'score' or 'label' is required");
    if (has_score) {
      if (!j["score"].is_number()) throw ParseError(line, "'score' must be a number");
      p.gold_score = j["score"].get<double>();
    } else {
      if (!j["label"].is_string()) throw ParseError(line, "'label' must be a string");
      try {
        p.gold_label = parse_label(j["label"].get<std::string>());
      } catch (const InputError& e) {
        throw ParseError(line, e.what());
      }
    }
    pairs.push_back(std::move(p));
  });
  return pairs;
}

std::vector<EvalPair> load_eval(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open eval file " + path.string());
  return read_eval(in);
}

void write_eval(std::ostream& out, const std::vector<EvalPair>& pairs) {
  for (const auto& p : pairs) {
    json j{{"s1", tokens_json(p.s1)}, {"s2", tokens_json(p.s2)}};
    if (p.gold_score) j["score"] = *p.gold_score;
    if (p.gold_label) j["label"] = std::string(to_string(*p.gold_label));
    out << j.dump() << '\n';
  }
}

void save_eval(const std::filesystem::path& path, const std::vector<EvalPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write eval file " + path.string());
  write_eval(out, pairs);
}

std::vector<EvalPair> filter_overlap(const std::vector<EvalPair>& pairs,
                                     const std::set<TokenSequence>& exclusion) {
  std::vector<EvalPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    if (!exclusion.contains(p.s1) && !exclusion.contains(p.s2)) out.push_back(p);
  return out;
}

std::vector<Batch> make_batches(std::size_t corpus_size, std::size_t batch_size, std::uint64_t seed,
                                bool drop_last) {
  if (batch_size < 2) throw ContractError("batch size must be at least 2");
  if (drop_last && corpus_size < batch_size)
    throw ContractError("corpus of " + std::to_string(corpus_size) +
                        " samples cannot fill one batch of " + std::to_string(batch_size));
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < corpus_size; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, corpus_size);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<Batch> make_batches(const Corpus& corpus, std::size_t batch_size, std::uint64_t seed,
                                bool drop_last) {
  return make_batches(corpus.size(), batch_size, seed, drop_last);
}

}  // namespace macd
