#include "macd/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "macd/diffcore.hpp"
#include "macd/errors.hpp"

namespace macd {

std::string_view to_string(AnchorDirection d) {
  return d == AnchorDirection::TeacherTarget ? "teacher-target" : "student-outer";
}

AnchorDirection parse_anchor_direction(std::string_view s) {
  if (s == "teacher-target") return AnchorDirection::TeacherTarget;
  if (s == "student-outer") return AnchorDirection::StudentOuter;
  throw ConfigError("unknown anchor direction: " + std::string(s));
}

void LossWeights::validate() const {
  if (!(tau_sigma > 0.0) || !(tau_c > 0.0) || !(tau_prime > 0.0))
    throw ConfigError("loss weights: temperatures must be positive");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("loss weights: epsilon outside [0,1]");
  if (!(gamma >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights: gamma/beta negative");
  if (gamma + beta > 1.0 + 1e-12) throw ConfigError("loss weights: gamma + beta exceeds 1");
}

LossWeights apply_ablation(LossWeights w, bool no_local, bool no_anchor) {
  double g = w.gamma;
  double b = no_local ? 0.0 : w.beta;
  double a = no_anchor ? 0.0 : w.anchor_weight();
  const double total = g + b + a;
  if (!(total > 0.0)) throw ConfigError("ablation removes every loss term");
  w.gamma = g / total;
  w.beta = b / total;
  // Keep gamma + beta exactly 1 when the anchor is dropped.
  if (no_anchor) w.beta = 1.0 - w.gamma;
  return w;
}

namespace graph {

namespace {

void require_square(const DenseMatrix& s) {
  if (s.rows() != s.cols()) throw InputError("energy matrix must be square");
  if (s.rows() < 2) throw ContractError("NCE needs at least two candidates (N >= 2)");
}

}  // namespace

ad::Var nce_loss(ad::Var log_scores, NceDirection direction) {
  const DenseMatrix& s = log_scores.value();
  require_square(s);
  const std::size_t n = s.rows();
  const bool by_row = direction == NceDirection::YGivenX;
  // resid holds posterior minus one-hot target per line, kept for backward.
  // Each line is evaluated through its margins against the positive, so a
  // confident line keeps full relative precision instead of cancelling
  // lse - s(l, l).
  DenseMatrix resid(n, n);
  double loss = 0.0;
  auto at = [&](std::size_t l, std::size_t k) -> double { return by_row ? s(l, k) : s(k, l); };
  auto put = [&](std::size_t l, std::size_t k, double v) {
    if (by_row)
      resid(l, k) = v;
    else
      resid(k, l) = v;
  };
  for (std::size_t l = 0; l < n; ++l) {
    double hi = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != l) hi = std::max(hi, at(l, k) - s(l, l));
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != l) total += std::exp(at(l, k) - s(l, l) - hi);
    const double line = hi == 0.0 ? std::log1p(total) : hi + std::log(std::exp(-hi) + total);
    loss += line;
    for (std::size_t k = 0; k < n; ++k)
      put(l, k, k == l ? std::expm1(-line) : std::exp(at(l, k) - s(l, l) - line));
  }
  loss /= static_cast<double>(n);
  const std::size_t is = log_scores.id();
  return log_scores.tape()->record(
      DenseMatrix(1, 1, loss), {log_scores},
      [is, resid = std::move(resid)](ad::Tape& tp, std::size_t, const DenseMatrix& g) {
        DenseMatrix* gs = tp.grad_buffer(is);
        const double scale = g[0] / static_cast<double>(resid.rows());
        for (std::size_t i = 0; i < resid.size(); ++i) (*gs)[i] += scale * resid[i];
      });
}

ad::Var bidirectional_nce(ad::Var log_scores) {
  return ad::add(nce_loss(log_scores, NceDirection::YGivenX),
                 nce_loss(log_scores, NceDirection::XGivenY));
}

ad::Var global_log_energy(ad::Var text_global, ad::Var image_global, double tau_sigma) {
  return ad::scale(ad::cosine_cols(text_global, image_global), 1.0 / tau_sigma);
}

ad::Var global_energy_matrix(std::span<const TextFeatureVars> texts,
                             std::span<const ImageFeatureVars> images, double tau_sigma) {
  if (texts.size() != images.size()) throw InputError("batch texts and images differ in length");
  if (texts.empty()) throw ContractError("empty batch");
  std::vector<ad::Var> f, g;
  f.reserve(texts.size());
  g.reserve(images.size());
  for (const auto& t : texts) f.push_back(t.global);
  for (const auto& i : images) g.push_back(i.global);
  const ad::Var fn = ad::normalize_cols(ad::hstack(f));
  const ad::Var gn = ad::normalize_cols(ad::hstack(g));
  return ad::scale(ad::matmul(ad::transpose(fn), gn), 1.0 / tau_sigma);
}

AttentionVars word_patch_attention(const TextFeatureVars& xf, const ImageFeatureVars& yf) {
  if (xf.word.rows() != yf.patch.rows())
    throw InputError("word and patch features live in different dimensions");
  // dots(i, j) = f_word(x_i) . g_patch(y_j)
  const ad::Var dots = ad::matmul(ad::transpose(xf.word), yf.patch);
  return {ad::softmax_rows(dots), ad::softmax_cols(dots)};
}

ContextVars local_contexts(const TextFeatureVars& xf, const ImageFeatureVars& yf,
                           const AttentionVars& am, double tau_c) {
  // Patch j: convex combination of words, weights normalised over words.
  const ad::Var word_weights = ad::softmax_cols(am.attn, tau_c);
  // Word i: convex combination of patches, weights normalised over patches.
  const ad::Var patch_weights = ad::softmax_rows(am.attn_prime, tau_c);
  return {ad::matmul(xf.word, word_weights),
          ad::matmul(yf.patch, ad::transpose(patch_weights))};
}

ad::Var sigma_local_score(const TextFeatureVars& xf, const ImageFeatureVars& yf,
                          const LossWeights& w) {
  const AttentionVars am = word_patch_attention(xf, yf);
  const ContextVars ctx = local_contexts(xf, yf, am, w.tau_c);
  const double inv = 1.0 / w.tau_sigma;
  const ad::Var word_scores = ad::scale(ad::cosine_cols(xf.word, ctx.image_context), inv);
  const ad::Var patch_scores = ad::scale(ad::cosine_cols(yf.patch, ctx.text_context), inv);
  return ad::add(ad::log_sum_exp(word_scores), ad::log_sum_exp(patch_scores));
}

ad::Var local_score_matrix(std::span<const TextFeatureVars> texts,
                           std::span<const ImageFeatureVars> images, const LossWeights& w) {
  if (texts.size() != images.size()) throw InputError("batch texts and images differ in length");
  if (texts.empty()) throw ContractError("empty batch");
  const std::size_t n = texts.size();
  std::vector<ad::Var> scores;
  scores.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scores.push_back(sigma_local_score(texts[i], images[j], w));
  return ad::stack(scores, n, n);
}

namespace {

// Distillation cross-entropy between softmax(student/tau) and softmax(teacher/tau).
ad::Var distill_cross_entropy(ad::Var student, const DenseMatrix& teacher, double tau,
                              AnchorDirection direction) {
  const std::vector<double> s = softmax_temp(student.value().values(), tau);
  const std::vector<double> t = softmax_temp(teacher.values(), tau);
  // log-softmax computed directly to stay finite for peaked distributions.
  auto log_softmax = [tau](std::span<const double> v) {
    std::vector<double> scaled(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) scaled[i] = v[i] / tau;
    const double lse = macd::log_sum_exp(scaled);
    for (double& x : scaled) x -= lse;
    return scaled;
  };
  const std::vector<double> log_s = log_softmax(student.value().values());
  const std::vector<double> log_t = log_softmax(teacher.values());
  double ce = 0.0;
  if (direction == AnchorDirection::TeacherTarget) {
    for (std::size_t i = 0; i < s.size(); ++i) ce -= t[i] * log_s[i];
  } else {
    for (std::size_t i = 0; i < s.size(); ++i) ce -= s[i] * log_t[i];
  }
  const std::size_t id = student.id();
  return student.tape()->record(
      DenseMatrix(1, 1, ce), {student},
      [id, s, t, log_t, tau, direction, ce](ad::Tape& tp, std::size_t, const DenseMatrix& g) {
        DenseMatrix* gs = tp.grad_buffer(id);
        for (std::size_t k = 0; k < s.size(); ++k) {
          const double d = direction == AnchorDirection::TeacherTarget
                               ? (s[k] - t[k]) / tau
                               : -s[k] * (log_t[k] + ce) / tau;
          (*gs)[k] += g[0] * d;
        }
      });
}

}  // namespace

ad::Var anchor_loss(ad::Var student_global, const DenseMatrix& teacher_global,
                    const LossWeights& w) {
  if (student_global.value().size() != teacher_global.size())
    throw InputError("anchor: student and teacher dimensions differ");
  // Copy first: teacher_global may alias a node value that recording invalidates.
  const DenseMatrix target = teacher_global;
  ad::Tape& tape = *student_global.tape();
  const ad::Var teacher = tape.constant(target);
  const ad::Var ce = distill_cross_entropy(student_global, target, w.tau_prime,
                                           w.anchor_direction);
  const ad::Var cos = ad::cosine_cols(student_global, teacher);
  return ad::sub(ad::scale(ce, w.epsilon), ad::scale(cos, 1.0 - w.epsilon));
}

LossBreakdown LossVars::values() const {
  return {l_global.scalar(), l_local.scalar(), l_anchor.scalar(), total.scalar()};
}

LossVars total_loss(std::span<const TextFeatureVars> texts,
                    std::span<const ImageFeatureVars> images,
                    std::span<const TextFeatures> teachers, const LossWeights& w) {
  w.validate();
  if (teachers.size() != texts.size()) throw InputError("one teacher feature per text required");
  LossVars out;
  out.l_global = bidirectional_nce(global_energy_matrix(texts, images, w.tau_sigma));
  out.l_local = bidirectional_nce(local_score_matrix(texts, images, w));
  std::vector<ad::Var> anchors;
  anchors.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i)
    anchors.push_back(anchor_loss(texts[i].global, teachers[i].global, w));
  out.l_anchor = ad::mean(ad::stack(anchors, anchors.size(), 1));
  out.total = ad::add(ad::add(ad::scale(out.l_global, w.gamma), ad::scale(out.l_local, w.beta)),
                      ad::scale(out.l_anchor, w.anchor_weight()));
  return out;
}

}  // namespace graph

// ---- value-level wrappers -------------------------------------------------

namespace {

std::vector<TextFeatureVars> place_all(ad::Tape& tape, std::span<const TextFeatures> fs) {
  std::vector<TextFeatureVars> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(place(tape, f, false));
  return out;
}

std::vector<ImageFeatureVars> place_all(ad::Tape& tape, std::span<const ImageFeatures> fs) {
  std::vector<ImageFeatureVars> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(place(tape, f, false));
  return out;
}

}  // namespace

double sigma_global(const TextFeatures& xf, const ImageFeatures& yf, double tau_sigma) {
  if (!(tau_sigma > 0.0)) throw ConfigError("tau_sigma must be positive");
  return std::exp(cosine(xf.global.values(), yf.global.values()) / tau_sigma);
}

double nce_loss_from_scores(const EnergyMatrix& log_scores, NceDirection direction) {
  ad::Tape tape;
  return graph::nce_loss(tape.constant(log_scores.scores), direction).scalar();
}

EnergyMatrix global_energy_matrix(std::span<const TextFeatures> texts,
                                  std::span<const ImageFeatures> images, const LossWeights& w) {
  ad::Tape tape;
  const auto t = place_all(tape, texts);
  const auto i = place_all(tape, images);
  return {graph::global_energy_matrix(t, i, w.tau_sigma).value(), EnergyKind::GlobalEnergy};
}

double global_nce(std::span<const TextFeatures> texts, std::span<const ImageFeatures> images,
                  const LossWeights& w) {
  ad::Tape tape;
  const EnergyMatrix m = global_energy_matrix(texts, images, w);
  return graph::bidirectional_nce(tape.constant(m.scores)).scalar();
}

AttentionMap word_patch_attention(const TextFeatures& xf, const ImageFeatures& yf) {
  ad::Tape tape;
  const auto am = graph::word_patch_attention(place(tape, xf, false), place(tape, yf, false));
  return {am.attn.value(), am.attn_prime.value()};
}

LocalContexts local_contexts(const TextFeatures& xf, const ImageFeatures& yf,
                             const AttentionMap& am, double tau_c) {
  if (am.attn.rows() != xf.word.cols() || am.attn.cols() != yf.patch.cols() ||
      am.attn_prime.rows() != xf.word.cols() || am.attn_prime.cols() != yf.patch.cols())
    throw InputError("attention map does not match feature shapes");
  ad::Tape tape;
  const graph::AttentionVars av{tape.constant(am.attn), tape.constant(am.attn_prime)};
  const auto ctx = graph::local_contexts(place(tape, xf, false), place(tape, yf, false), av, tau_c);
  return {ctx.text_context.value(), ctx.image_context.value()};
}

double sigma_local_score(const TextFeatures& xf, const ImageFeatures& yf, const LossWeights& w) {
  ad::Tape tape;
  return graph::sigma_local_score(place(tape, xf, false), place(tape, yf, false), w).scalar();
}

EnergyMatrix local_score_matrix(std::span<const TextFeatures> texts,
                                std::span<const ImageFeatures> images, const LossWeights& w) {
  ad::Tape tape;
  const auto t = place_all(tape, texts);
  const auto i = place_all(tape, images);
  return {graph::local_score_matrix(t, i, w).value(), EnergyKind::LocalScore};
}

double local_nce(std::span<const TextFeatures> texts, std::span<const ImageFeatures> images,
                 const LossWeights& w) {
  ad::Tape tape;
  const EnergyMatrix m = local_score_matrix(texts, images, w);
  return graph::bidirectional_nce(tape.constant(m.scores)).scalar();
}

double anchor_loss(const TextFeatures& student, const TextFeatures& teacher, const LossWeights& w) {
  ad::Tape tape;
  return graph::anchor_loss(tape.constant(student.global), teacher.global, w).scalar();
}

LossBreakdown total_loss(std::span<const TextFeatures> texts, std::span<const ImageFeatures> images,
                         std::span<const TextFeatures> teachers, const LossWeights& w) {
  ad::Tape tape;
  const auto t = place_all(tape, texts);
  const auto i = place_all(tape, images);
  return graph::total_loss(t, i, teachers, w).values();
}

LossBreakdown total_loss(std::span<const PairedSample> batch, const EncoderParams& params,
                         const TeacherSnapshot& snapshot, const LossWeights& w) {
  std::vector<TextFeatures> texts, teachers;
  std::vector<ImageFeatures> images;
  for (const auto& s : batch) {
    texts.push_back(encode_text(s.text, params.text));
    images.push_back(encode_image(s.image, params.image));
    teachers.push_back(teacher_encode(s.text, snapshot));
  }
  return total_loss(texts, images, teachers, w);
}

}  // namespace macd
