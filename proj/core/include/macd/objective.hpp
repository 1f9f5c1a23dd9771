#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "macd/autodiff.hpp"
#include "macd/encoders.hpp"
#include "macd/types.hpp"

namespace macd {

// Which way the distillation cross-entropy runs.
//   TeacherTarget: -sum_i t_i log s_i (teacher distribution is the target).
//   StudentOuter:  -sum_i s_i log t_i (current model inside the leading sum).
enum class AnchorDirection { TeacherTarget, StudentOuter };

std::string_view to_string(AnchorDirection d);
AnchorDirection parse_anchor_direction(std::string_view s);

struct LossWeights {
  double tau_sigma = 0.1;      // energy temperature
  double tau_c = 1.0;          // context temperature
  double tau_prime = 2.0;      // distillation temperature
  double epsilon = 5.0 / 6.0;  // cross-entropy share inside the anchor loss
  double gamma = 1.0 / 3.0;    // global NCE weight
  double beta = 1.0 / 3.0;     // local NCE weight; the anchor gets 1 - gamma - beta
  AnchorDirection anchor_direction = AnchorDirection::TeacherTarget;

  double anchor_weight() const noexcept { return 1.0 - gamma - beta; }
  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Drops the local and/or anchor term and rescales the surviving coefficients
// so they again sum to one.
LossWeights apply_ablation(LossWeights w, bool no_local, bool no_anchor);

enum class NceDirection { YGivenX, XGivenY };
enum class EnergyKind { GlobalEnergy, LocalScore };

// scores(i, j): log-energy of text i against image j. Diagonal = positives.
struct EnergyMatrix {
  DenseMatrix scores;
  EnergyKind kind = EnergyKind::GlobalEnergy;
};

// attn: rows (words) sum to one over patches. attn_prime: columns (patches)
// sum to one over words. Both are L x M^2.
struct AttentionMap {
  DenseMatrix attn;
  DenseMatrix attn_prime;
};

struct LocalContexts {
  DenseMatrix text_context;   // shared_dim x M^2, word mixture describing each patch
  DenseMatrix image_context;  // shared_dim x L, patch mixture describing each word
};

struct LossBreakdown {
  double l_global = 0.0;
  double l_local = 0.0;
  double l_anchor = 0.0;
  double total = 0.0;
  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

// ---- value-level API -------------------------------------------------------

// exp(cosine(f_global, g_global) / tau_sigma)
double sigma_global(const TextFeatures& xf, const ImageFeatures& yf, double tau_sigma);

double nce_loss_from_scores(const EnergyMatrix& log_scores, NceDirection direction);

EnergyMatrix global_energy_matrix(std::span<const TextFeatures> texts,
                                  std::span<const ImageFeatures> images, const LossWeights& w);
double global_nce(std::span<const TextFeatures> texts, std::span<const ImageFeatures> images,
                  const LossWeights& w);

AttentionMap word_patch_attention(const TextFeatures& xf, const ImageFeatures& yf);
LocalContexts local_contexts(const TextFeatures& xf, const ImageFeatures& yf,
                             const AttentionMap& am, double tau_c);
double sigma_local_score(const TextFeatures& xf, const ImageFeatures& yf, const LossWeights& w);

EnergyMatrix local_score_matrix(std::span<const TextFeatures> texts,
                                std::span<const ImageFeatures> images, const LossWeights& w);
double local_nce(std::span<const TextFeatures> texts, std::span<const ImageFeatures> images,
                 const LossWeights& w);

double anchor_loss(const TextFeatures& student, const TextFeatures& teacher, const LossWeights& w);

// Feature-level combination; teachers[i] is f'(x_i).
LossBreakdown total_loss(std::span<const TextFeatures> texts, std::span<const ImageFeatures> images,
                         std::span<const TextFeatures> teachers, const LossWeights& w);

// Encodes a batch with the student encoders and the teacher snapshot, then
// combines the three terms.
LossBreakdown total_loss(std::span<const PairedSample> batch, const EncoderParams& params,
                         const TeacherSnapshot& snapshot, const LossWeights& w);

// ---- differentiable API ----------------------------------------------------

namespace graph {

ad::Var nce_loss(ad::Var log_scores, NceDirection direction);
// Both directions summed.
ad::Var bidirectional_nce(ad::Var log_scores);

ad::Var global_log_energy(ad::Var text_global, ad::Var image_global, double tau_sigma);
ad::Var global_energy_matrix(std::span<const TextFeatureVars> texts,
                             std::span<const ImageFeatureVars> images, double tau_sigma);

struct AttentionVars {
  ad::Var attn;
  ad::Var attn_prime;
};
AttentionVars word_patch_attention(const TextFeatureVars& xf, const ImageFeatureVars& yf);

struct ContextVars {
  ad::Var text_context;
  ad::Var image_context;
};
ContextVars local_contexts(const TextFeatureVars& xf, const ImageFeatureVars& yf,
                           const AttentionVars& am, double tau_c);

ad::Var sigma_local_score(const TextFeatureVars& xf, const ImageFeatureVars& yf,
                          const LossWeights& w);
ad::Var local_score_matrix(std::span<const TextFeatureVars> texts,
                           std::span<const ImageFeatureVars> images, const LossWeights& w);

// Teacher features are taken by value: no gradient ever reaches them.
ad::Var anchor_loss(ad::Var student_global, const DenseMatrix& teacher_global,
                    const LossWeights& w);

struct LossVars {
  ad::Var l_global;
  ad::Var l_local;
  ad::Var l_anchor;
  ad::Var total;

  LossBreakdown values() const;
};

LossVars total_loss(std::span<const TextFeatureVars> texts,
                    std::span<const ImageFeatureVars> images,
                    std::span<const TextFeatures> teachers, const LossWeights& w);

}  // namespace graph

}  // namespace macd
