#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "macd/data.hpp"
#include "macd/encoders.hpp"

// Unsupervised evaluation. Everything here reads text-encoder parameters only.
namespace macd {

struct Thresholds {
  double psi1 = 0.80;  // sim >= psi1 -> entailment
  double psi2 = 0.55;  // sim <  psi2 -> contradiction
  void validate() const;
  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

struct FiveNumberSummary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  friend bool operator==(const FiveNumberSummary&, const FiveNumberSummary&) = default;
};

enum class EvalMode { Sts, Nli };
std::string_view to_string(EvalMode m);
EvalMode parse_eval_mode(std::string_view s);

struct EvalReport {
  EvalMode mode = EvalMode::Sts;
  std::size_t n_pairs = 0;
  std::optional<double> pearson;
  std::optional<double> spearman;
  std::optional<double> accuracy;
  std::optional<Thresholds> thresholds;
  std::map<NliLabel, FiveNumberSummary> per_label_stats;
  std::vector<std::string> warnings;
};

// Cosine of the two sentence embeddings f_global.
double sentence_similarity(const TokenSequence& s1, const TokenSequence& s2,
                           const TextEncoderParams& params);

double pearson(std::span<const double> xs, std::span<const double> ys);
// Pearson over ranks; tied values share the mean of their rank block.
double spearman(std::span<const double> xs, std::span<const double> ys);
std::vector<double> average_ranks(std::span<const double> xs);

NliLabel classify(double sim, const Thresholds& t);
double classification_accuracy(std::span<const double> sims, std::span<const NliLabel> gold,
                               const Thresholds& t);

// The 41 candidate thresholds {-1, -0.95, ..., 1}.
std::vector<double> threshold_grid();

struct GridSearchResult {
  Thresholds thresholds;
  double accuracy = 0.0;
};

// Exhaustive search over psi2 <= psi1 on the grid; ties keep the smallest psi1,
// then the smallest psi2.
GridSearchResult grid_search_thresholds(std::span<const double> sims, std::span<const NliLabel> gold);

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

// Ranks by L1 distance between sentence embeddings; ties keep corpus order.
std::vector<Neighbor> nearest_neighbors(const TokenSequence& query,
                                        std::span<const TokenSequence> corpus, std::size_t k,
                                        const TextEncoderParams& params);
// Same ranking over precomputed embeddings.
std::vector<Neighbor> rank_by_l1(std::span<const double> query,
                                 std::span<const std::vector<double>> embeddings, std::size_t k);

// Tukey hinges: for odd n the median belongs to both halves, so [1,2,3,4,5]
// gives q1 = 2 and q3 = 4.
FiveNumberSummary five_number_summary(std::span<const double> values);

// Empty groups are left out of the result and reported through warnings.
std::map<NliLabel, FiveNumberSummary> label_distribution_stats(
    const std::map<NliLabel, std::vector<double>>& groups, std::vector<std::string>* warnings = nullptr);

struct EvalOptions {
  std::optional<Thresholds> thresholds;
  // When thresholds are not given, search them on this split.
  std::optional<std::vector<EvalPair>> dev_pairs;
};

EvalReport evaluate(const std::vector<EvalPair>& pairs, const TextEncoderParams& params, EvalMode mode,
                    const EvalOptions& options = {});

std::string to_json(const EvalReport& report);
// label,min,q1,median,q3,max
std::string per_label_csv(const EvalReport& report);

}  // namespace macd
