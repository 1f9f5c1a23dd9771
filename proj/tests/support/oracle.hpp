#pragma once

// Brute-force scalar-loop reference implementations. Nothing here calls into
// the library's numerics; inputs are only read through DenseMatrix accessors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <vector>

#include "macd/data.hpp"
#include "macd/dense_matrix.hpp"
#include "macd/objective.hpp"
#include "macd/types.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // Mat[r][c]

inline Vec column(const macd::DenseMatrix& m, std::size_t c) {
  Vec v(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) v[r] = m(r, c);
  return v;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cos(const Vec& a, const Vec& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

inline double lse(const Vec& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vec softmax(const Vec& v, double tau) {
  Vec out(v.size());
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += std::exp((v[i] - m) / tau);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp((v[i] - m) / tau) / z;
  return out;
}

// Mean over lines of -(s_ii - log sum_j exp s_ij); by_row = y-given-x.
inline double nce(const Mat& s, bool by_row) {
  const std::size_t n = s.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vec line(n);
    for (std::size_t j = 0; j < n; ++j) line[j] = by_row ? s[i][j] : s[j][i];
    total += lse(line) - s[i][i];
  }
  return total / static_cast<double>(n);
}

inline Mat global_scores(const std::vector<macd::TextFeatures>& t,
                         const std::vector<macd::ImageFeatures>& im, double tau_sigma) {
  Mat s(t.size(), Vec(im.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < im.size(); ++j)
      s[i][j] = cos(column(t[i].global, 0), column(im[j].global, 0)) / tau_sigma;
  return s;
}

inline double global_nce(const std::vector<macd::TextFeatures>& t,
                         const std::vector<macd::ImageFeatures>& im, double tau_sigma) {
  const Mat s = global_scores(t, im, tau_sigma);
  return nce(s, true) + nce(s, false);
}

struct Attention {
  Mat attn;        // [word][patch], softmax over patches
  Mat attn_prime;  // [word][patch], softmax over words
};

inline Attention attention(const macd::TextFeatures& x, const macd::ImageFeatures& y) {
  const std::size_t L = x.word.cols(), P = y.patch.cols();
  Mat dots(L, Vec(P));
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < P; ++j) dots[i][j] = dot(column(x.word, i), column(y.patch, j));
  Attention a{Mat(L, Vec(P)), Mat(L, Vec(P))};
  for (std::size_t i = 0; i < L; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < P; ++j) z += std::exp(dots[i][j]);
    for (std::size_t j = 0; j < P; ++j) a.attn[i][j] = std::exp(dots[i][j]) / z;
  }
  for (std::size_t j = 0; j < P; ++j) {
    double z = 0.0;
    for (std::size_t i = 0; i < L; ++i) z += std::exp(dots[i][j]);
    for (std::size_t i = 0; i < L; ++i) a.attn_prime[i][j] = std::exp(dots[i][j]) / z;
  }
  return a;
}

struct Contexts {
  Mat text_context;   // [patch] -> d-vector
  Mat image_context;  // [word] -> d-vector
};

inline Contexts contexts(const macd::TextFeatures& x, const macd::ImageFeatures& y, const Attention& a,
                         double tau_c) {
  const std::size_t d = x.word.rows(), L = x.word.cols(), P = y.patch.cols();
  Contexts c{Mat(P, Vec(d, 0.0)), Mat(L, Vec(d, 0.0))};
  for (std::size_t j = 0; j < P; ++j) {
    double z = 0.0;
    for (std::size_t i = 0; i < L; ++i) z += std::exp(a.attn[i][j] / tau_c);
    for (std::size_t i = 0; i < L; ++i) {
      const double w = std::exp(a.attn[i][j] / tau_c) / z;
      for (std::size_t r = 0; r < d; ++r) c.text_context[j][r] += w * x.word(r, i);
    }
  }
  for (std::size_t i = 0; i < L; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < P; ++j) z += std::exp(a.attn_prime[i][j] / tau_c);
    for (std::size_t j = 0; j < P; ++j) {
      const double w = std::exp(a.attn_prime[i][j] / tau_c) / z;
      for (std::size_t r = 0; r < d; ++r) c.image_context[i][r] += w * y.patch(r, j);
    }
  }
  return c;
}

inline double sigma_local(const macd::TextFeatures& x, const macd::ImageFeatures& y,
                          const macd::LossWeights& w) {
  const Attention a = attention(x, y);
  const Contexts c = contexts(x, y, a, w.tau_c);
  Vec sw, sp;
  for (std::size_t i = 0; i < x.word.cols(); ++i)
    sw.push_back(cos(column(x.word, i), c.image_context[i]) / w.tau_sigma);
  for (std::size_t j = 0; j < y.patch.cols(); ++j)
    sp.push_back(cos(column(y.patch, j), c.text_context[j]) / w.tau_sigma);
  return lse(sw) + lse(sp);
}

inline double local_nce(const std::vector<macd::TextFeatures>& t,
                        const std::vector<macd::ImageFeatures>& im, const macd::LossWeights& w) {
  Mat s(t.size(), Vec(im.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < im.size(); ++j) s[i][j] = sigma_local(t[i], im[j], w);
  return nce(s, true) + nce(s, false);
}

inline double anchor(const macd::TextFeatures& student, const macd::TextFeatures& teacher,
                     const macd::LossWeights& w) {
  const Vec f = column(student.global, 0), ft = column(teacher.global, 0);
  const Vec s = softmax(f, w.tau_prime), t = softmax(ft, w.tau_prime);
  double ce = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    ce -= w.anchor_direction == macd::AnchorDirection::TeacherTarget ? t[i] * std::log(s[i])
                                                                     : s[i] * std::log(t[i]);
  return w.epsilon * ce - (1.0 - w.epsilon) * cos(f, ft);
}

inline double total(const std::vector<macd::TextFeatures>& t, const std::vector<macd::ImageFeatures>& im,
                    const std::vector<macd::TextFeatures>& teachers, const macd::LossWeights& w) {
  double a = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) a += anchor(t[i], teachers[i], w);
  a /= static_cast<double>(t.size());
  return w.gamma * global_nce(t, im, w.tau_sigma) + w.beta * local_nce(t, im, w) +
         (1.0 - w.gamma - w.beta) * a;
}

// ---- metrics ---------------------------------------------------------------

inline double pearson(const Vec& x, const Vec& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - sx / n) * (y[i] - sy / n);
    vx += (x[i] - sx / n) * (x[i] - sx / n);
    vy += (y[i] - sy / n) * (y[i] - sy / n);
  }
  return cov / std::sqrt(vx * vy);
}

// Rank by counting: 1 + #smaller + (#equal others)/2.
inline Vec ranks(const Vec& x) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) less += 1;
      if (j != i && x[j] == x[i]) equal += 1;
    }
    r[i] = 1.0 + less + equal / 2.0;
  }
  return r;
}

inline double spearman(const Vec& x, const Vec& y) { return pearson(ranks(x), ranks(y)); }

inline double accuracy(const Vec& sims, const std::vector<macd::NliLabel>& gold, double psi1, double psi2) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    macd::NliLabel p = macd::NliLabel::Neutral;
    if (sims[i] >= psi1)
      p = macd::NliLabel::Entailment;
    else if (sims[i] < psi2)
      p = macd::NliLabel::Contradiction;
    hit += p == gold[i] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(sims.size());
}

struct Five {
  double min, q1, median, q3, max;
};

// Tukey hinges by explicit index arithmetic on the sorted sample.
inline Five five_number(Vec v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  auto med = [&](std::size_t lo, std::size_t hi) {  // inclusive range
    const std::size_t len = hi - lo + 1;
    return len % 2 ? v[lo + len / 2] : 0.5 * (v[lo + len / 2 - 1] + v[lo + len / 2]);
  };
  const std::size_t h = (n + 1) / 2;  // size of each half, median shared when n is odd
  return {v[0], med(0, h - 1), med(0, n - 1), med(n - h, n - 1), v[n - 1]};
}

// Repeated minimum scan; ties resolved toward the lower index.
inline std::vector<std::pair<std::size_t, double>> l1_rank(const Vec& q, const Mat& e, std::size_t k) {
  std::vector<double> d(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    d[i] = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) d[i] += std::fabs(q[c] - e[i][c]);
  }
  std::vector<bool> used(e.size(), false);
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t r = 0; r < k; ++r) {
    std::size_t best = e.size();
    for (std::size_t i = 0; i < e.size(); ++i)
      if (!used[i] && (best == e.size() || d[i] < d[best])) best = i;
    used[best] = true;
    out.emplace_back(best, d[best]);
  }
  return out;
}

// Exact mutual information I(C; C) = H(C) of a discrete context label by enumeration.
inline double context_entropy(const std::vector<int>& labels) {
  std::map<int, double> counts;
  for (int c : labels) counts[c] += 1.0;
  double h = 0.0;
  for (const auto& [c, k] : counts) {
    const double p = k / static_cast<double>(labels.size());
    h -= p * std::log(p);
  }
  return h;
}

// ---- random instances ------------------------------------------------------

inline macd::DenseMatrix gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  macd::DenseMatrix m(r, c);
  for (double& x : m.values()) x = n(rng);
  return m;
}

inline macd::TextFeatures random_text(std::mt19937_64& rng, std::size_t d, std::size_t L) {
  return {gaussian(rng, d, L), gaussian(rng, d, 1)};
}

inline macd::ImageFeatures random_image(std::mt19937_64& rng, std::size_t d, std::size_t P) {
  return {gaussian(rng, d, P), gaussian(rng, d, 1)};
}

}  // namespace oracle
