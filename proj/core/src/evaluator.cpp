#include "macd/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "macd/diffcore.hpp"
#include "macd/errors.hpp"

namespace macd {

void Thresholds::validate() const {
  if (!(psi1 >= -1.0 && psi1 <= 1.0) || !(psi2 >= -1.0 && psi2 <= 1.0))
    throw ConfigError("thresholds must lie in [-1, 1]");
  if (psi2 > psi1) throw ConfigError("psi2 must not exceed psi1");
}

std::string_view to_string(EvalMode m) { return m == EvalMode::Sts ? "sts" : "nli"; }

EvalMode parse_eval_mode(std::string_view s) {
  if (s == "sts") return EvalMode::Sts;
  if (s == "nli") return EvalMode::Nli;
  throw ConfigError("unknown evaluation mode: " + std::string(s));
}

double sentence_similarity(const TokenSequence& s1, const TokenSequence& s2,
                           const TextEncoderParams& params) {
  const TextFeatures a = encode_text(s1, params);
  const TextFeatures b = encode_text(s2, params);
  return cosine(a.global.values(), b.global.values());
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InputError("pearson: length mismatch");
  if (xs.size() < 2) throw InputError("pearson: need at least two points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    // 1-based ranks i+1 .. j+1 share their mean
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InputError("spearman: length mismatch");
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  return pearson(rx, ry);
}

NliLabel classify(double sim, const Thresholds& t) {
  if (sim >= t.psi1) return NliLabel::Entailment;
  if (sim < t.psi2) return NliLabel::Contradiction;
  return NliLabel::Neutral;
}

double classification_accuracy(std::span<const double> sims, std::span<const NliLabel> gold,
                               const Thresholds& t) {
  if (sims.size() != gold.size()) throw InputError("accuracy: length mismatch");
  if (sims.empty()) throw InputError("accuracy: no pairs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sims.size(); ++i) hits += classify(sims[i], t) == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(sims.size());
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int k = -20; k <= 20; ++k) grid.push_back(static_cast<double>(k) / 20.0);
  return grid;
}

GridSearchResult grid_search_thresholds(std::span<const double> sims, std::span<const NliLabel> gold) {
  const std::vector<double> grid = threshold_grid();
  GridSearchResult best{{grid.front(), grid.front()}, -1.0};
  for (double psi1 : grid) {
    for (double psi2 : grid) {
      if (psi2 > psi1) break;
      const double acc = classification_accuracy(sims, gold, {psi1, psi2});
      if (acc > best.accuracy) best = {{psi1, psi2}, acc};
    }
  }
  return best;
}

std::vector<Neighbor> rank_by_l1(std::span<const double> query,
                                 std::span<const std::vector<double>> embeddings, std::size_t k) {
  if (embeddings.empty()) throw ContractError("nearest neighbours: empty corpus");
  if (k > embeddings.size()) throw ContractError("nearest neighbours: k exceeds corpus size");
  std::vector<Neighbor> all(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != query.size()) throw InputError("nearest neighbours: dimension mismatch");
    double d = 0.0;
    for (std::size_t c = 0; c < query.size(); ++c) d += std::abs(query[c] - embeddings[i][c]);
    all[i] = {i, d};
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(k);
  return all;
}

std::vector<Neighbor> nearest_neighbors(const TokenSequence& query,
                                        std::span<const TokenSequence> corpus, std::size_t k,
                                        const TextEncoderParams& params) {
  if (corpus.empty()) throw ContractError("nearest neighbours: empty corpus");
  std::vector<std::vector<double>> embeddings;
  embeddings.reserve(corpus.size());
  for (const auto& s : corpus) {
    const DenseMatrix g = encode_text(s, params).global;
    embeddings.emplace_back(g.values().begin(), g.values().end());
  }
  const DenseMatrix q = encode_text(query, params).global;
  return rank_by_l1(q.values(), embeddings, k);
}

namespace {

double median_sorted(std::span<const double> v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

FiveNumberSummary five_number_summary(std::span<const double> values) {
  if (values.empty()) throw InputError("five-number summary of an empty group");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const std::size_t half = (n + 1) / 2;
  const std::span<const double> all(v);
  return {v.front(), median_sorted(all.first(half)), median_sorted(all),
          median_sorted(all.last(half)), v.back()};
}

std::map<NliLabel, FiveNumberSummary> label_distribution_stats(
    const std::map<NliLabel, std::vector<double>>& groups, std::vector<std::string>* warnings) {
  std::map<NliLabel, FiveNumberSummary> out;
  for (const auto& [label, sims] : groups) {
    if (sims.empty()) {
      if (warnings) warnings->push_back("no pairs with label " + std::string(to_string(label)));
      continue;
    }
    out[label] = five_number_summary(sims);
  }
  return out;
}

namespace {

std::vector<double> similarities(const std::vector<EvalPair>& pairs, const TextEncoderParams& params) {
  std::vector<double> sims;
  sims.reserve(pairs.size());
  for (const auto& p : pairs) sims.push_back(sentence_similarity(p.s1, p.s2, params));
  return sims;
}

std::vector<NliLabel> gold_labels(const std::vector<EvalPair>& pairs) {
  std::vector<NliLabel> gold;
  gold.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!p.gold_label) throw InputError("nli evaluation needs a gold label on every pair");
    gold.push_back(*p.gold_label);
  }
  return gold;
}

}  // namespace

EvalReport evaluate(const std::vector<EvalPair>& pairs, const TextEncoderParams& params, EvalMode mode,
                    const EvalOptions& options) {
  EvalReport report;
  report.mode = mode;
  report.n_pairs = pairs.size();
  if (pairs.empty()) throw InputError("evaluation set is empty");

  if (mode == EvalMode::Sts) {
    std::vector<double> gold;
    gold.reserve(pairs.size());
    for (const auto& p : pairs) {
      if (!p.gold_score) throw InputError("sts evaluation needs a gold score on every pair");
      gold.push_back(*p.gold_score);
    }
    if (pairs.size() < 2) throw InputError("correlations need at least two pairs");
    const std::vector<double> sims = similarities(pairs, params);
    report.pearson = pearson(sims, gold);
    report.spearman = spearman(sims, gold);
    return report;
  }

  const std::vector<NliLabel> gold = gold_labels(pairs);
  Thresholds t;
  if (options.thresholds) {
    t = *options.thresholds;
  } else if (options.dev_pairs) {
    const std::vector<double> dev_sims = similarities(*options.dev_pairs, params);
    t = grid_search_thresholds(dev_sims, gold_labels(*options.dev_pairs)).thresholds;
  }
  t.validate();
  const std::vector<double> sims = similarities(pairs, params);
  report.thresholds = t;
  report.accuracy = classification_accuracy(sims, gold, t);
  std::map<NliLabel, std::vector<double>> groups{
      {NliLabel::Entailment, {}}, {NliLabel::Neutral, {}}, {NliLabel::Contradiction, {}}};
  for (std::size_t i = 0; i < sims.size(); ++i) groups[gold[i]].push_back(sims[i]);
  report.per_label_stats = label_distribution_stats(groups, &report.warnings);
  return report;
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(r.mode));
  j["n_pairs"] = r.n_pairs;
  if (r.pearson) j["pearson"] = *r.pearson;
  if (r.spearman) j["spearman"] = *r.spearman;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (r.thresholds) j["thresholds"] = {{"psi1", r.thresholds->psi1}, {"psi2", r.thresholds->psi2}};
  if (!r.per_label_stats.empty()) {
    nlohmann::ordered_json stats = nlohmann::ordered_json::object();
    for (const auto& [label, s] : r.per_label_stats)
      stats[std::string(to_string(label))] = {
          {"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}};
    j["per_label_stats"] = std::move(stats);
  }
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j.dump(2);
}

std::string per_label_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "label,min,q1,median,q3,max\n";
  for (const auto& [label, s] : r.per_label_stats)
    os << to_string(label) << ',' << s.min << ',' << s.q1 << ',' << s.median << ',' << s.q3 << ','
       << s.max << '\n';
  return os.str();
}

}  // namespace macd
