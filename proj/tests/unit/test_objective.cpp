#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "macd/diffcore.hpp"
#include "macd/errors.hpp"
#include "macd/objective.hpp"
#include "oracle.hpp"

using namespace macd;

namespace {

TextFeatures text_global(std::vector<double> g) {
  const std::size_t d = g.size();
  return {DenseMatrix(d, 1, 1.0), DenseMatrix(d, 1, std::move(g))};
}

ImageFeatures image_global(std::vector<double> g) {
  const std::size_t d = g.size();
  return {DenseMatrix(d, 1, 1.0), DenseMatrix(d, 1, std::move(g))};
}

EnergyMatrix scores(DenseMatrix m) { return {std::move(m), EnergyKind::GlobalEnergy}; }

}  // namespace

// ---- sigma_global ------------------------------------------------------------

TEST(SigmaGlobal, Examples) {
  EXPECT_NEAR(sigma_global(text_global({1, 0}), image_global({1, 0}), 0.1), 22026.465794806718, 1e-8);
  EXPECT_NEAR(sigma_global(text_global({1, 0}), image_global({0, 3}), 0.37), 1.0, 1e-15);
  EXPECT_NEAR(sigma_global(text_global({1, 0}), image_global({-2, 0}), 1.0), std::exp(-1.0), 1e-15);
  EXPECT_THROW(sigma_global(text_global({0, 0}), image_global({1, 0}), 0.1), DomainError);
}

// ---- NCE from scores -----------------------------------------------------------

TEST(Nce, UniformScoresGiveLogN) {
  for (std::size_t n : {2u, 4u, 8u}) {
    for (double v : {-3.0, 0.0, 11.5}) {
      const EnergyMatrix s = scores(DenseMatrix(n, n, v));
      EXPECT_NEAR(nce_loss_from_scores(s, NceDirection::YGivenX), std::log(double(n)), 1e-12);
      EXPECT_NEAR(nce_loss_from_scores(s, NceDirection::XGivenY), std::log(double(n)), 1e-12);
    }
  }
}

TEST(Nce, TwoByTwoHandValue) {
  // -[1 - log(e^1 + e^0)] = log(1 + e^-1)
  const EnergyMatrix s = scores(DenseMatrix::from_rows({{1, 0}, {0, 1}}));
  EXPECT_NEAR(nce_loss_from_scores(s, NceDirection::YGivenX), 0.31326168751822286, 1e-12);
  EXPECT_NEAR(nce_loss_from_scores(s, NceDirection::XGivenY), 0.31326168751822286, 1e-12);
}

TEST(Nce, SymmetricMatrixGivesEqualDirections) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    DenseMatrix m = oracle::gaussian(rng, 4, 4);
    DenseMatrix sym(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) sym(i, j) = m(i, j) + m(j, i);
    EXPECT_NEAR(nce_loss_from_scores(scores(sym), NceDirection::YGivenX),
                nce_loss_from_scores(scores(sym), NceDirection::XGivenY), 1e-12);
  }
}

TEST(Nce, Errors) {
  EXPECT_THROW(nce_loss_from_scores(scores(DenseMatrix(1, 1, 0.0)), NceDirection::YGivenX), ContractError);
  EXPECT_THROW(nce_loss_from_scores(scores(DenseMatrix(2, 3, 0.0)), NceDirection::YGivenX), InputError);
}

TEST(Nce, MatchesOracleAndIsNonNegative) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + t % 7;
    DenseMatrix m = oracle::gaussian(rng, n, n);
    for (double& x : m.values()) x *= 4.0;
    oracle::Mat o(n, oracle::Vec(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) o[i][j] = m(i, j);
    const double yx = nce_loss_from_scores(scores(m), NceDirection::YGivenX);
    const double xy = nce_loss_from_scores(scores(m), NceDirection::XGivenY);
    EXPECT_NEAR(yx, oracle::nce(o, true), 1e-9);
    EXPECT_NEAR(xy, oracle::nce(o, false), 1e-9);
    EXPECT_GE(yx, 0.0);
    EXPECT_GE(xy, 0.0);
    EXPECT_LE(std::log(double(n)) - yx, std::log(double(n)));
  }
}

TEST(Nce, RowShiftInvariance) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    DenseMatrix m = oracle::gaussian(rng, 4, 4);
    DenseMatrix shifted = m;
    for (int i = 0; i < 4; ++i) {
      const double c = 10.0 * (i - 1.5) + t;
      for (int j = 0; j < 4; ++j) shifted(i, j) += c;
    }
    EXPECT_NEAR(nce_loss_from_scores(scores(m), NceDirection::YGivenX),
                nce_loss_from_scores(scores(shifted), NceDirection::YGivenX), 1e-12);
  }
}

TEST(Nce, ConfidentRowsKeepRelativePrecision) {
  // Margin 40: the loss is ~ 3 e^-40, far below the ulp of the scores.
  const EnergyMatrix s = scores(DenseMatrix::from_rows({{50, 10, 10}, {10, 50, 10}, {10, 10, 50}}));
  const double expected = std::log1p(2.0 * std::exp(-40.0));
  EXPECT_NEAR(nce_loss_from_scores(s, NceDirection::YGivenX) / expected, 1.0, 1e-12);
}

// ---- global NCE ------------------------------------------------------------------

TEST(GlobalNce, DuplicatedPairGivesTwoLogN) {
  const LossWeights w;
  for (std::size_t n : {2u, 3u, 5u}) {
    std::vector<TextFeatures> t(n, text_global({0.3, -1, 2}));
    std::vector<ImageFeatures> im(n, image_global({1, 1, 0.5}));
    EXPECT_NEAR(global_nce(t, im, w), 2.0 * std::log(double(n)), 1e-12);
  }
}

TEST(GlobalNce, DiagonalDominantIsBelowBound) {
  const LossWeights w;
  std::vector<TextFeatures> t{text_global({1, 0, 0}), text_global({0, 1, 0}), text_global({0, 0, 1})};
  std::vector<ImageFeatures> im{image_global({1, 0.1, 0}), image_global({0, 1, 0.1}),
                                image_global({0.1, 0, 1})};
  EXPECT_LT(global_nce(t, im, w), 2.0 * std::log(3.0));
}

TEST(GlobalNce, MatchesBruteForce) {
  std::mt19937_64 rng(4);
  LossWeights w;
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 2 + t % 3, d = 2 + t % 7;
    std::vector<TextFeatures> tx;
    std::vector<ImageFeatures> im;
    for (std::size_t i = 0; i < n; ++i) {
      tx.push_back(oracle::random_text(rng, d, 2));
      im.push_back(oracle::random_image(rng, d, 1));
    }
    w.tau_sigma = 0.1 + 0.2 * (t % 4);
    EXPECT_NEAR(global_nce(tx, im, w), oracle::global_nce(tx, im, w.tau_sigma), 1e-9);
    const EnergyMatrix e = global_energy_matrix(tx, im, w);
    const oracle::Mat o = oracle::global_scores(tx, im, w.tau_sigma);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(e.scores(i, j), o[i][j], 1e-12);
  }
}

TEST(GlobalNce, DegenerateTextsArePermutationInvariantInImages) {
  std::mt19937_64 rng(5);
  const LossWeights w;
  std::vector<TextFeatures> t(4, oracle::random_text(rng, 5, 2));
  std::vector<ImageFeatures> im;
  for (int i = 0; i < 4; ++i) im.push_back(oracle::random_image(rng, 5, 1));
  const double base = global_nce(t, im, w);
  std::vector<std::size_t> perm{0, 1, 2, 3};
  while (std::next_permutation(perm.begin(), perm.end())) {
    std::vector<ImageFeatures> p;
    for (std::size_t k : perm) p.push_back(im[k]);
    EXPECT_NEAR(global_nce(t, p, w), base, 1e-12);
  }
}

// ---- attention and contexts ---------------------------------------------------

TEST(Attention, EqualDotsGiveUniformMaps) {
  const TextFeatures x{DenseMatrix(3, 2, 0.0), DenseMatrix(3, 1, 1.0)};
  std::mt19937_64 rng(6);
  const ImageFeatures y = oracle::random_image(rng, 3, 4);
  const AttentionMap a = word_patch_attention(x, y);
  for (double v : a.attn.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  for (double v : a.attn_prime.values()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Attention, SingleWordSinglePatch) {
  std::mt19937_64 rng(7);
  const AttentionMap a = word_patch_attention(oracle::random_text(rng, 3, 1), oracle::random_image(rng, 3, 1));
  EXPECT_EQ(a.attn, DenseMatrix(1, 1, 1.0));
  EXPECT_EQ(a.attn_prime, DenseMatrix(1, 1, 1.0));
}

TEST(Attention, MatchesScalarSoftmaxAndNormalizes) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const TextFeatures x = oracle::random_text(rng, 5, 3);
    const ImageFeatures y = oracle::random_image(rng, 5, 4);
    const AttentionMap a = word_patch_attention(x, y);
    const oracle::Attention o = oracle::attention(x, y);
    ASSERT_EQ(a.attn.rows(), 3u);
    ASSERT_EQ(a.attn.cols(), 4u);
    for (std::size_t i = 0; i < 3; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        row += a.attn(i, j);
        EXPECT_NEAR(a.attn(i, j), o.attn[i][j], 1e-12);
        EXPECT_NEAR(a.attn_prime(i, j), o.attn_prime[i][j], 1e-12);
        EXPECT_GT(a.attn(i, j), 0.0);
        EXPECT_LT(a.attn(i, j), 1.0);
      }
      EXPECT_NEAR(row, 1.0, 1e-9);
    }
    for (std::size_t j = 0; j < 4; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < 3; ++i) col += a.attn_prime(i, j);
      EXPECT_NEAR(col, 1.0, 1e-9);
    }
  }
}

TEST(Contexts, SingleWordContextIsThatWord) {
  std::mt19937_64 rng(9);
  const TextFeatures x = oracle::random_text(rng, 4, 1);
  const ImageFeatures y = oracle::random_image(rng, 4, 4);
  const LocalContexts c = local_contexts(x, y, word_patch_attention(x, y), 1.0);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(c.text_context(r, j), x.word(r, 0), 1e-15);
}

TEST(Contexts, UniformAttentionGivesMeanWord) {
  std::mt19937_64 rng(10);
  const TextFeatures x = oracle::random_text(rng, 4, 3);
  const ImageFeatures y = oracle::random_image(rng, 4, 2);
  const AttentionMap uniform{DenseMatrix(3, 2, 0.5), DenseMatrix(3, 2, 1.0 / 3.0)};
  const LocalContexts c = local_contexts(x, y, uniform, 1.0);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t r = 0; r < 4; ++r)
      EXPECT_NEAR(c.text_context(r, j), (x.word(r, 0) + x.word(r, 1) + x.word(r, 2)) / 3.0, 1e-14);
}

TEST(Contexts, SharpTemperatureSelectsDominantWord) {
  std::mt19937_64 rng(11);
  const TextFeatures x = oracle::random_text(rng, 4, 3);
  const ImageFeatures y = oracle::random_image(rng, 4, 2);
  // Column 0 is dominated by word 2, column 1 by word 0.
  const AttentionMap am{DenseMatrix::from_rows({{0.1, 0.8}, {0.2, 0.15}, {0.7, 0.05}}),
                        DenseMatrix::from_rows({{0.3, 0.6}, {0.3, 0.2}, {0.4, 0.2}})};
  const LocalContexts c = local_contexts(x, y, am, 1e-3);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_NEAR(c.text_context(r, 0), x.word(r, 2), 1e-3);
    EXPECT_NEAR(c.text_context(r, 1), x.word(r, 0), 1e-3);
  }
  // Image context of word 0 is dominated by patch 1 (0.6 > 0.3).
  for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(c.image_context(r, 0), y.patch(r, 1), 1e-3);
}

TEST(Contexts, MatchOracle) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 2 + t % 7, L = 1 + t % 5, P = t % 2 ? 4 : 1;
    const TextFeatures x = oracle::random_text(rng, d, L);
    const ImageFeatures y = oracle::random_image(rng, d, P);
    const double tau_c = 0.5 + 0.25 * (t % 4);
    const LocalContexts c = local_contexts(x, y, word_patch_attention(x, y), tau_c);
    const oracle::Contexts o = oracle::contexts(x, y, oracle::attention(x, y), tau_c);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t j = 0; j < P; ++j) EXPECT_NEAR(c.text_context(r, j), o.text_context[j][r], 1e-12);
      for (std::size_t i = 0; i < L; ++i) EXPECT_NEAR(c.image_context(r, i), o.image_context[i][r], 1e-12);
    }
  }
}

// ---- sigma_local and local NCE -------------------------------------------------

TEST(SigmaLocal, OrthogonalModalitiesGiveLogLM) {
  // Words live in span(e1, e2), patches in span(e3, e4): every cosine is 0.
  const TextFeatures x{DenseMatrix::from_rows({{1, 0}, {0, 1}, {0, 0}, {0, 0}}), DenseMatrix(4, 1, 1.0)};
  const ImageFeatures y{DenseMatrix::from_rows({{0, 0, 0, 0}, {0, 0, 0, 0}, {1, 0, 1, 1}, {0, 1, 1, -1}}),
                        DenseMatrix(4, 1, 1.0)};
  LossWeights w;
  w.tau_sigma = 1.0;
  EXPECT_NEAR(sigma_local_score(x, y, w), std::log(8.0), 1e-12);
}

TEST(SigmaLocal, SingleIdenticalWordAndPatch) {
  const TextFeatures x{DenseMatrix::from_rows({{1}, {2}}), DenseMatrix(2, 1, 1.0)};
  const ImageFeatures y{DenseMatrix::from_rows({{1}, {2}}), DenseMatrix(2, 1, 1.0)};
  LossWeights w;
  w.tau_sigma = 1.0;
  EXPECT_NEAR(sigma_local_score(x, y, w), 2.0, 1e-12);
}

TEST(SigmaLocal, ZeroWordIsDomainError) {
  const TextFeatures x{DenseMatrix(2, 2, 0.0), DenseMatrix(2, 1, 1.0)};
  const ImageFeatures y{DenseMatrix(2, 1, 1.0), DenseMatrix(2, 1, 1.0)};
  EXPECT_THROW(sigma_local_score(x, y, LossWeights{}), DomainError);
}

TEST(SigmaLocal, MatchesBruteForce) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 2 + t % 7, L = 1 + t % 5, P = t % 3 ? 4 : 1;
    LossWeights w;
    w.tau_c = 0.5 + 0.5 * (t % 3);
    w.tau_sigma = 0.1 + 0.3 * (t % 2);
    const TextFeatures x = oracle::random_text(rng, d, L);
    const ImageFeatures y = oracle::random_image(rng, d, P);
    EXPECT_NEAR(sigma_local_score(x, y, w), oracle::sigma_local(x, y, w), 1e-9);
  }
}

TEST(LocalNce, IdenticalPairsGiveTwoLogN) {
  std::mt19937_64 rng(14);
  const TextFeatures x = oracle::random_text(rng, 4, 3);
  const ImageFeatures y = oracle::random_image(rng, 4, 4);
  for (std::size_t n : {2u, 4u}) {
    std::vector<TextFeatures> t(n, x);
    std::vector<ImageFeatures> im(n, y);
    EXPECT_NEAR(local_nce(t, im, LossWeights{}), 2.0 * std::log(double(n)), 1e-12);
  }
}

TEST(LocalNce, MatchesBruteForce) {
  std::mt19937_64 rng(15);
  const LossWeights w;
  for (int t = 0; t < 10; ++t) {
    const std::size_t n = 2 + t % 3, d = 3 + t % 6, L = 1 + t % 5, P = t % 2 ? 4 : 1;
    std::vector<TextFeatures> tx;
    std::vector<ImageFeatures> im;
    for (std::size_t i = 0; i < n; ++i) {
      tx.push_back(oracle::random_text(rng, d, L));
      im.push_back(oracle::random_image(rng, d, P));
    }
    EXPECT_NEAR(local_nce(tx, im, w), oracle::local_nce(tx, im, w), 1e-9);
    const EnergyMatrix m = local_score_matrix(tx, im, w);
    EXPECT_EQ(m.kind, EnergyKind::LocalScore);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(m.scores(i, j), oracle::sigma_local(tx[i], im[j], w), 1e-12);
  }
}

// ---- anchor -------------------------------------------------------------------

TEST(Anchor, EqualComponentsHandValue) {
  const LossWeights w;  // epsilon 5/6, tau' 2
  const TextFeatures f = text_global({0.7, 0.7});
  EXPECT_NEAR(anchor_loss(f, f, w), 5.0 / 6.0 * std::log(2.0) - 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(anchor_loss(f, f, w), 0.41096, 1e-5);
}

TEST(Anchor, PureCosineAtIdentity) {
  LossWeights w;
  w.epsilon = 0.0;
  std::mt19937_64 rng(16);
  const TextFeatures f = oracle::random_text(rng, 6, 1);
  EXPECT_NEAR(anchor_loss(f, f, w), -1.0, 1e-15);
}

TEST(Anchor, PureCrossEntropyMinimizedAtTeacher) {
  LossWeights w;
  w.epsilon = 1.0;
  std::mt19937_64 rng(17);
  const TextFeatures teacher = oracle::random_text(rng, 5, 1);
  const Vector t = softmax_temp(teacher.global.values(), w.tau_prime);
  double entropy = 0.0;
  for (double p : t) entropy -= p * std::log(p);
  EXPECT_NEAR(anchor_loss(teacher, teacher, w), entropy, 1e-12);
  for (int k = 0; k < 100; ++k) {
    const TextFeatures s = oracle::random_text(rng, 5, 1);
    EXPECT_GE(anchor_loss(s, teacher, w), entropy - 1e-12);
  }
}

TEST(Anchor, BothDirectionsMatchOracle) {
  std::mt19937_64 rng(18);
  for (AnchorDirection dir : {AnchorDirection::TeacherTarget, AnchorDirection::StudentOuter}) {
    LossWeights w;
    w.anchor_direction = dir;
    for (int k = 0; k < 20; ++k) {
      const TextFeatures s = oracle::random_text(rng, 2 + k % 7, 1);
      const TextFeatures t = oracle::random_text(rng, 2 + k % 7, 1);
      EXPECT_NEAR(anchor_loss(s, t, w), oracle::anchor(s, t, w), 1e-9);
    }
  }
}

TEST(Anchor, ZeroNormIsDomainError) {
  EXPECT_THROW(anchor_loss(text_global({0, 0}), text_global({1, 0}), LossWeights{}), DomainError);
}

TEST(Anchor, NoGradientReachesTeacher) {
  std::mt19937_64 rng(19);
  ad::Tape tape;
  const ad::Var student = tape.variable(oracle::gaussian(rng, 4, 1));
  const ad::Var teacher = tape.variable(oracle::gaussian(rng, 4, 1));
  const ad::Var loss = graph::anchor_loss(student, teacher.value(), LossWeights{});
  tape.backward(loss);
  EXPECT_GT(student.grad().size(), 0u);
  EXPECT_EQ(teacher.grad().size(), 0u);
}

TEST(Anchor, DirectionNames) {
  EXPECT_EQ(parse_anchor_direction("teacher-target"), AnchorDirection::TeacherTarget);
  EXPECT_EQ(parse_anchor_direction(to_string(AnchorDirection::StudentOuter)), AnchorDirection::StudentOuter);
  EXPECT_THROW(parse_anchor_direction("sideways"), ConfigError);
}

// ---- total loss -----------------------------------------------------------------

namespace {

struct Batch3 {
  std::vector<TextFeatures> texts, teachers;
  std::vector<ImageFeatures> images;
};

Batch3 random_batch(std::mt19937_64& rng, std::size_t n, std::size_t d, std::size_t L, std::size_t P) {
  Batch3 b;
  for (std::size_t i = 0; i < n; ++i) {
    b.texts.push_back(oracle::random_text(rng, d, L));
    b.images.push_back(oracle::random_image(rng, d, P));
    b.teachers.push_back(oracle::random_text(rng, d, L));
  }
  return b;
}

}  // namespace

TEST(TotalLoss, DegenerateWeightsGiveGlobalOnly) {
  std::mt19937_64 rng(20);
  const Batch3 b = random_batch(rng, 3, 4, 2, 4);
  LossWeights w;
  w.gamma = 1.0;
  w.beta = 0.0;
  const LossBreakdown l = total_loss(b.texts, b.images, b.teachers, w);
  EXPECT_EQ(l.total, global_nce(b.texts, b.images, w));
}

TEST(TotalLoss, DefaultWeightsAverageTheThreeTerms) {
  std::mt19937_64 rng(21);
  const Batch3 b = random_batch(rng, 4, 5, 3, 4);
  const LossBreakdown l = total_loss(b.texts, b.images, b.teachers, LossWeights{});
  EXPECT_NEAR(l.total, (l.l_global + l.l_local + l.l_anchor) / 3.0, 1e-12);
}

TEST(TotalLoss, BreakdownInvariantAndOracle) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + t % 3, d = 2 + t % 7, L = 1 + t % 5, P = t % 2 ? 4 : 1;
    const Batch3 b = random_batch(rng, n, d, L, P);
    LossWeights w;
    w.gamma = 0.1 * (t % 5);
    w.beta = 0.15 * (t % 4);
    w.anchor_direction = t % 2 ? AnchorDirection::StudentOuter : AnchorDirection::TeacherTarget;
    const LossBreakdown l = total_loss(b.texts, b.images, b.teachers, w);
    EXPECT_NEAR(l.total, w.gamma * l.l_global + w.beta * l.l_local + (1 - w.gamma - w.beta) * l.l_anchor, 1e-9);
    EXPECT_NEAR(l.total, oracle::total(b.texts, b.images, b.teachers, w), 1e-9);
    EXPECT_NEAR(l.l_global, oracle::global_nce(b.texts, b.images, w.tau_sigma), 1e-9);
    EXPECT_NEAR(l.l_local, oracle::local_nce(b.texts, b.images, w), 1e-9);
  }
}

TEST(TotalLoss, EncoderLevelMatchesFeatureLevel) {
  EncoderConfig c;
  c.text.vocab_size = 10;
  c.text.embed_dim = 4;
  c.text.shared_dim = 3;
  c.image.patch_width = 2;
  c.image.shared_dim = 3;
  const EncoderParams p = init_encoders(c, 3);
  const TeacherSnapshot snap{init_encoders(c, 4).text};
  std::vector<PairedSample> batch;
  std::mt19937_64 rng(23);
  for (int i = 0; i < 3; ++i)
    batch.push_back({{i, i + 1, 2 * i}, {2, oracle::gaussian(rng, 4, 2)}, std::nullopt});
  std::vector<TextFeatures> t, th;
  std::vector<ImageFeatures> im;
  for (const auto& s : batch) {
    t.push_back(encode_text(s.text, p.text));
    th.push_back(teacher_encode(s.text, snap));
    im.push_back(encode_image(s.image, p.image));
  }
  EXPECT_EQ(total_loss(batch, p, snap, LossWeights{}), total_loss(t, im, th, LossWeights{}));
}

// ---- weights and ablation -------------------------------------------------------

TEST(LossWeights, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.tau_sigma, 0.1);
  EXPECT_EQ(w.tau_c, 1.0);
  EXPECT_EQ(w.tau_prime, 2.0);
  EXPECT_EQ(w.epsilon, 5.0 / 6.0);
  EXPECT_EQ(w.gamma, 1.0 / 3.0);
  EXPECT_EQ(w.beta, 1.0 / 3.0);
  EXPECT_NO_THROW(w.validate());
  LossWeights bad = w;
  bad.gamma = 0.8;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = w;
  bad.tau_c = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = w;
  bad.epsilon = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Ablation, RenormalizesSurvivors) {
  const LossWeights w;
  const LossWeights nl = apply_ablation(w, true, false);
  EXPECT_NEAR(nl.gamma, 0.5, 1e-15);
  EXPECT_EQ(nl.beta, 0.0);
  EXPECT_NEAR(nl.anchor_weight(), 0.5, 1e-15);
  const LossWeights na = apply_ablation(w, false, true);
  EXPECT_NEAR(na.gamma, 0.5, 1e-15);
  EXPECT_NEAR(na.beta, 0.5, 1e-15);
  EXPECT_EQ(na.anchor_weight(), 0.0);
  const LossWeights both = apply_ablation(w, true, true);
  EXPECT_EQ(both.gamma, 1.0);
  EXPECT_EQ(both.beta, 0.0);
  EXPECT_EQ(both.anchor_weight(), 0.0);
  LossWeights uneven;
  uneven.gamma = 0.2;
  uneven.beta = 0.6;
  const LossWeights u = apply_ablation(uneven, false, true);
  EXPECT_NEAR(u.gamma, 0.25, 1e-15);
  EXPECT_EQ(u.anchor_weight(), 0.0);
  EXPECT_EQ(apply_ablation(w, false, false), w);
  LossWeights only_local;
  only_local.gamma = 0.0;
  only_local.beta = 1.0;
  EXPECT_THROW(apply_ablation(only_local, true, true), ConfigError);
}

TEST(Contexts, StayInsideConvexHull) {
  std::mt19937_64 rng(24);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 2 + t % 7, L = 1 + t % 5, P = t % 2 ? 4 : 1;
    const TextFeatures x = oracle::random_text(rng, d, L);
    const ImageFeatures y = oracle::random_image(rng, d, P);
    const LocalContexts c = local_contexts(x, y, word_patch_attention(x, y), 0.5 + t % 3);
    for (std::size_t r = 0; r < d; ++r) {
      double lo = x.word(r, 0), hi = lo;
      for (std::size_t i = 0; i < L; ++i) {
        lo = std::min(lo, x.word(r, i));
        hi = std::max(hi, x.word(r, i));
      }
      for (std::size_t j = 0; j < P; ++j) {
        EXPECT_GE(c.text_context(r, j), lo - 1e-12);
        EXPECT_LE(c.text_context(r, j), hi + 1e-12);
      }
      lo = hi = y.patch(r, 0);
      for (std::size_t j = 0; j < P; ++j) {
        lo = std::min(lo, y.patch(r, j));
        hi = std::max(hi, y.patch(r, j));
      }
      for (std::size_t i = 0; i < L; ++i) {
        EXPECT_GE(c.image_context(r, i), lo - 1e-12);
        EXPECT_LE(c.image_context(r, i), hi + 1e-12);
      }
    }
  }
}
