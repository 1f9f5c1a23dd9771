#include "macd/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "macd/autodiff.hpp"
#include "macd/encoders.hpp"
#include "macd/objective.hpp"
#include "macd/trainer.hpp"

namespace macd {

namespace {

using ad::Tape;
using ad::Var;

struct Shape {
  std::size_t rows;
  std::size_t cols;
};

using Forward = std::function<Var(Tape&, const std::vector<Var>&)>;

DenseMatrix as_matrix(const Vector& v, Shape s) { return DenseMatrix(s.rows, s.cols, v); }

Vector as_vector(const DenseMatrix& m) { return Vector(m.values().begin(), m.values().end()); }

// Runs the same forward on a tape twice: once on constants for the value and
// once on variables for the reverse pass.
DifferentiableFunction from_forward(std::vector<Shape> shapes, Forward forward) {
  auto sh = std::make_shared<const std::vector<Shape>>(std::move(shapes));
  auto fw = std::make_shared<const Forward>(std::move(forward));
  DifferentiableFunction fn;
  fn.value = [sh, fw](const std::vector<Vector>& in) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t k = 0; k < in.size(); ++k) vars.push_back(tape.constant(as_matrix(in[k], (*sh)[k])));
    return (*fw)(tape, vars).scalar();
  };
  fn.gradient = [sh, fw](const std::vector<Vector>& in) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t k = 0; k < in.size(); ++k) vars.push_back(tape.variable(as_matrix(in[k], (*sh)[k])));
    tape.backward((*fw)(tape, vars));
    std::vector<Vector> out;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const DenseMatrix& g = vars[k].grad();
      out.push_back(g.size() == in[k].size() ? as_vector(g) : Vector(in[k].size(), 0.0));
    }
    return out;
  };
  return fn;
}

Var exp_op(Var a) {
  DenseMatrix v = a.value();
  for (double& x : v.values()) x = std::exp(x);
  return a.tape()->record(v, {a}, [a](Tape& tp, std::size_t self, const DenseMatrix& g) {
    if (DenseMatrix* ga = tp.grad_buffer(a.id())) {
      const DenseMatrix& out = tp.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * out[i];
    }
  });
}

// sum_ij r_ij a_ij: turns a matrix-valued map into a scalar with a generic
// upstream gradient.
Var contract(Var a, DenseMatrix r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * a.value()[i];
  return a.tape()->record(DenseMatrix(1, 1, s), {a},
                          [a, r = std::move(r)](Tape& tp, std::size_t, const DenseMatrix& g) {
                            if (DenseMatrix* ga = tp.grad_buffer(a.id()))
                              for (std::size_t i = 0; i < r.size(); ++i) (*ga)[i] += g[0] * r[i];
                          });
}

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  DenseMatrix gaussian(std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    DenseMatrix m(rows, cols);
    for (double& x : m.values()) x = n(rng_);
    return m;
  }
  Vector vec(std::size_t n, double scale = 1.0) { return as_vector(gaussian(n, 1, scale)); }

 private:
  std::mt19937_64 rng_;
};

TextFeatureVars text_vars(Tape& tape, Var word, Var global) {
  if (!word.valid()) word = tape.constant(DenseMatrix(global.rows(), 1, 0.0));
  return {word, global};
}

void add_encoder_case(std::vector<GradCase>& cases, Sampler& rnd, std::uint64_t seed,
                      std::size_t n, std::size_t dim, const LossWeights& w) {
  EncoderConfig cfg;
  cfg.text.vocab_size = 10;
  cfg.text.embed_dim = rnd.uniform(2, 8);
  cfg.text.shared_dim = dim;
  cfg.text.max_length = 8;
  switch (seed % 3) {
    case 0:
      cfg.text.mixing = Mixing::SelfAttention;
      break;
    case 1:
      cfg.text.mixing = Mixing::MeanResidual;
      break;
    default:
      cfg.text.mixing = Mixing::None;
      cfg.text.aggregation = Aggregation::Mean;
      break;
  }
  cfg.text.positional = seed % 2 == 1;
  cfg.image.patch_width = 3;
  cfg.image.shared_dim = dim;

  auto corpus = std::make_shared<Corpus>();
  const std::size_t m2 = rnd.uniform(0, 1) == 0 ? 1 : 4;
  for (std::size_t i = 0; i < n; ++i) {
    PairedSample s;
    const std::size_t len = rnd.uniform(1, 5);
    for (std::size_t t = 0; t < len; ++t) s.text.push_back(static_cast<int>(rnd.uniform(0, 9)));
    s.image.side = m2 == 1 ? 1 : 2;
    s.image.patches = rnd.gaussian(m2, 3);
    corpus->samples.push_back(std::move(s));
  }

  EncoderParams base = init_encoders(cfg, seed);
  // Nonzero biases and slot so every parameter carries a generic gradient.
  base.for_each_tensor([&](const std::string&, DenseMatrix& m) {
    for (double& x : m.values()) x += rnd.gaussian(1, 1, 0.1)[0];
  });
  const TeacherSnapshot teacher{init_encoders(cfg, seed + 7919).text};
  auto teachers = std::make_shared<std::vector<TextFeatures>>();
  for (const auto& s : corpus->samples) teachers->push_back(teacher_encode(s.text, teacher));

  std::vector<Vector> inputs;
  base.for_each_tensor([&](const std::string&, const DenseMatrix& m) {
    if (m.size() > 0) inputs.push_back(as_vector(m));
  });
  auto tmpl = std::make_shared<const EncoderParams>(base);
  auto rebuild = [tmpl](const std::vector<Vector>& in) {
    EncoderParams p = *tmpl;
    std::size_t k = 0;
    p.for_each_tensor([&](const std::string&, DenseMatrix& m) {
      if (m.size() > 0) m = DenseMatrix(m.rows(), m.cols(), in[k++]);
    });
    return p;
  };
  Batch batch(n);
  for (std::size_t i = 0; i < n; ++i) batch[i] = i;

  DifferentiableFunction fn;
  fn.value = [=](const std::vector<Vector>& in) {
    const EncoderParams p = rebuild(in);
    std::vector<TextFeatures> texts;
    std::vector<ImageFeatures> images;
    for (const auto& s : corpus->samples) {
      texts.push_back(encode_text(s.text, p.text));
      images.push_back(encode_image(s.image, p.image));
    }
    return total_loss(texts, images, *teachers, w).total;
  };
  fn.gradient = [=](const std::vector<Vector>& in) {
    const BatchGradient bg = batch_gradient(*corpus, batch, rebuild(in), *teachers, w);
    std::vector<Vector> out;
    for (const DenseMatrix& g : bg.grads)
      if (g.size() > 0) out.push_back(as_vector(g));
    return out;
  };
  cases.push_back({"total_loss.encoder_params", std::move(fn), std::move(inputs)});
}

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  Sampler rnd(seed);
  const std::size_t dim = rnd.uniform(2, 8);
  const std::size_t len = rnd.uniform(1, 5);
  const std::size_t m2 = rnd.uniform(0, 1) == 0 ? 1 : 4;
  const std::size_t n = rnd.uniform(2, 4);
  const LossWeights w;
  std::vector<GradCase> cases;

  cases.push_back({"sigma_global",
                   from_forward({{dim, 1}, {dim, 1}},
                                [w](Tape&, const std::vector<Var>& v) {
                                  return exp_op(graph::global_log_energy(v[0], v[1], w.tau_sigma));
                                }),
                   {rnd.vec(dim), rnd.vec(dim)}});

  for (NceDirection d : {NceDirection::YGivenX, NceDirection::XGivenY}) {
    cases.push_back({d == NceDirection::YGivenX ? "nce.y_given_x" : "nce.x_given_y",
                     from_forward({{n, n}}, [d](Tape&, const std::vector<Var>& v) {
                       return graph::nce_loss(v[0], d);
                     }),
                     {rnd.vec(n * n, 2.0)}});
  }

  {
    std::vector<Shape> shapes(2 * n, Shape{dim, 1});
    std::vector<Vector> in;
    for (std::size_t i = 0; i < 2 * n; ++i) in.push_back(rnd.vec(dim));
    cases.push_back({"global_nce", from_forward(shapes, [n, w](Tape& tape, const std::vector<Var>& v) {
                       std::vector<TextFeatureVars> t;
                       std::vector<ImageFeatureVars> i;
                       for (std::size_t k = 0; k < n; ++k) {
                         t.push_back(text_vars(tape, Var{}, v[k]));
                         i.push_back({tape.constant(DenseMatrix(v[n + k].rows(), 1, 0.0)), v[n + k]});
                       }
                       return graph::bidirectional_nce(graph::global_energy_matrix(t, i, w.tau_sigma));
                     }),
                     std::move(in)});
  }

  const Shape word{dim, len}, patch{dim, m2}, global{dim, 1};
  {
    DenseMatrix r1 = rnd.gaussian(len, m2), r2 = rnd.gaussian(len, m2);
    cases.push_back({"word_patch_attention",
                     from_forward({word, patch},
                                  [r1, r2](Tape& tape, const std::vector<Var>& v) {
                                    const auto am = graph::word_patch_attention(
                                        text_vars(tape, v[0], tape.constant(DenseMatrix(v[0].rows(), 1, 1.0))),
                                        {v[1], tape.constant(DenseMatrix(v[1].rows(), 1, 1.0))});
                                    return contract(am.attn, r1) + contract(am.attn_prime, r2);
                                  }),
                     {rnd.vec(dim * len), rnd.vec(dim * m2)}});
  }
  {
    DenseMatrix r1 = rnd.gaussian(dim, m2), r2 = rnd.gaussian(dim, len);
    cases.push_back({"local_contexts",
                     from_forward({word, patch},
                                  [r1, r2, w](Tape& tape, const std::vector<Var>& v) {
                                    const TextFeatureVars x{v[0], tape.constant(DenseMatrix(v[0].rows(), 1, 1.0))};
                                    const ImageFeatureVars y{v[1], tape.constant(DenseMatrix(v[1].rows(), 1, 1.0))};
                                    const auto ctx = graph::local_contexts(x, y, graph::word_patch_attention(x, y), w.tau_c);
                                    return contract(ctx.text_context, r1) + contract(ctx.image_context, r2);
                                  }),
                     {rnd.vec(dim * len), rnd.vec(dim * m2)}});
  }
  cases.push_back({"sigma_local_score",
                   from_forward({word, patch},
                                [w](Tape& tape, const std::vector<Var>& v) {
                                  return graph::sigma_local_score(
                                      {v[0], tape.constant(DenseMatrix(v[0].rows(), 1, 1.0))},
                                      {v[1], tape.constant(DenseMatrix(v[1].rows(), 1, 1.0))}, w);
                                }),
                   {rnd.vec(dim * len), rnd.vec(dim * m2)}});
  {
    std::vector<Shape> shapes;
    std::vector<Vector> in;
    for (std::size_t k = 0; k < n; ++k) {
      shapes.push_back(word);
      in.push_back(rnd.vec(dim * len));
    }
    for (std::size_t k = 0; k < n; ++k) {
      shapes.push_back(patch);
      in.push_back(rnd.vec(dim * m2));
    }
    cases.push_back({"local_nce", from_forward(shapes, [n, w](Tape& tape, const std::vector<Var>& v) {
                       std::vector<TextFeatureVars> t;
                       std::vector<ImageFeatureVars> i;
                       for (std::size_t k = 0; k < n; ++k) {
                         t.push_back({v[k], tape.constant(DenseMatrix(v[k].rows(), 1, 1.0))});
                         i.push_back({v[n + k], tape.constant(DenseMatrix(v[n + k].rows(), 1, 1.0))});
                       }
                       return graph::bidirectional_nce(graph::local_score_matrix(t, i, w));
                     }),
                     std::move(in)});
  }

  for (AnchorDirection d : {AnchorDirection::TeacherTarget, AnchorDirection::StudentOuter}) {
    LossWeights wd = w;
    wd.anchor_direction = d;
    const DenseMatrix teacher = rnd.gaussian(dim, 1);
    cases.push_back({"anchor_loss." + std::string(to_string(d)),
                     from_forward({global}, [wd, teacher](Tape&, const std::vector<Var>& v) {
                       return graph::anchor_loss(v[0], teacher, wd);
                     }),
                     {rnd.vec(dim)}});
  }

  {
    std::vector<Shape> shapes;
    std::vector<Vector> in;
    auto teachers = std::make_shared<std::vector<TextFeatures>>();
    for (std::size_t k = 0; k < n; ++k) {
      shapes.insert(shapes.end(), {word, global, patch, global});
      in.push_back(rnd.vec(dim * len));
      in.push_back(rnd.vec(dim));
      in.push_back(rnd.vec(dim * m2));
      in.push_back(rnd.vec(dim));
      teachers->push_back({rnd.gaussian(dim, len), rnd.gaussian(dim, 1)});
    }
    cases.push_back({"total_loss.features",
                     from_forward(shapes, [n, w, teachers](Tape&, const std::vector<Var>& v) {
                       std::vector<TextFeatureVars> t;
                       std::vector<ImageFeatureVars> i;
                       for (std::size_t k = 0; k < n; ++k) {
                         t.push_back({v[4 * k], v[4 * k + 1]});
                         i.push_back({v[4 * k + 2], v[4 * k + 3]});
                       }
                       return graph::total_loss(t, i, *teachers, w).total;
                     }),
                     std::move(in)});
  }

  add_encoder_case(cases, rnd, seed, n, dim, w);
  return cases;
}

GradSuiteResult run_gradient_suite(const GradSuiteOptions& options) {
  GradSuiteResult result;
  result.passed = true;
  for (std::size_t k = 0; k < options.instances; ++k) {
    const std::uint64_t seed = options.base_seed + k;
    for (GradCase& c : gradient_cases(seed)) {
      GradSuiteEntry e{c.name, seed, grad_check(c.fn, c.inputs, options.check)};
      result.max_rel_error = std::max(result.max_rel_error, e.report.max_rel_error);
      result.passed = result.passed && e.report.passed;
      result.entries.push_back(std::move(e));
    }
  }
  return result;
}

}  // namespace macd
