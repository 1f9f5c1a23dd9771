#include "macd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "macd/errors.hpp"

namespace macd::ad {

const DenseMatrix& Var::value() const { return tape_->value(id_); }
const DenseMatrix& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
  const DenseMatrix& v = value();
  if (v.size() != 1) throw InputError("Var::scalar on a non-scalar node");
  return v[0];
}

Var Tape::variable(DenseMatrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(DenseMatrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(DenseMatrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(DenseMatrix value, std::span<const Var> inputs, Backward backward) {
  bool any = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw InputError("autodiff: mixing vars from different tapes");
    any = any || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, any, any ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

DenseMatrix* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = DenseMatrix(n.value.rows(), n.value.cols());
  return &n.grad;
}

void Tape::backward(Var out) {
  if (out.tape() != this) throw InputError("backward: var from another tape");
  if (nodes_[out.id()].value.size() != 1) throw InputError("backward: output must be scalar");
  for (Node& n : nodes_) n.grad = DenseMatrix();
  DenseMatrix* seed = grad_buffer(out.id());
  if (seed == nullptr) return;
  (*seed)[0] = 1.0;
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may grow grad buffers of earlier nodes but never appends nodes,
    // so a reference into nodes_ stays valid.
    n.backward(*this, i, n.grad);
  }
}

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(macd::matmul(a.value(), b.value()), {a, b},
                  [ia, ib](Tape& tp, std::size_t, const DenseMatrix& g) {
                    const DenseMatrix& av = tp.value(ia);
                    const DenseMatrix& bv = tp.value(ib);
                    if (DenseMatrix* ga = tp.grad_buffer(ia)) {
                      // dA = G B^T
                      for (std::size_t i = 0; i < av.rows(); ++i)
                        for (std::size_t k = 0; k < av.cols(); ++k) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < bv.cols(); ++j) s += g(i, j) * bv(k, j);
                          (*ga)(i, k) += s;
                        }
                    }
                    if (DenseMatrix* gb = tp.grad_buffer(ib)) {
                      // dB = A^T G
                      for (std::size_t i = 0; i < av.rows(); ++i)
                        for (std::size_t k = 0; k < av.cols(); ++k) {
                          const double aik = av(i, k);
                          for (std::size_t j = 0; j < bv.cols(); ++j) (*gb)(k, j) += aik * g(i, j);
                        }
                    }
                  });
}

Var transpose(Var a) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().transposed(), {a}, [ia](Tape& tp, std::size_t, const DenseMatrix& g) {
    DenseMatrix* ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(c, r) += g(r, c);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  DenseMatrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t, const DenseMatrix& g) {
    if (DenseMatrix* ga = tp.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (DenseMatrix* gb = tp.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  DenseMatrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t, const DenseMatrix& g) {
    if (DenseMatrix* ga = tp.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (DenseMatrix* gb = tp.grad_buffer(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var scale(Var a, double factor) {
  DenseMatrix out = a.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, factor](Tape& tp, std::size_t, const DenseMatrix& g) {
    DenseMatrix* ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
  });
}

Var add_col(Var a, Var b) {
  const DenseMatrix& av = a.value();
  const DenseMatrix& bv = b.value();
  if (bv.cols() != 1 || bv.rows() != av.rows()) throw InputError("add_col: bias shape mismatch");
  DenseMatrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[r];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t, const DenseMatrix& g) {
    if (DenseMatrix* ga = tp.grad_buffer(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (DenseMatrix* gb = tp.grad_buffer(ib))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[r] += g(r, c);
  });
}

Var mean_cols(Var a) {
  const DenseMatrix& av = a.value();
  if (av.cols() == 0) throw InputError("mean_cols: no columns");
  DenseMatrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c);
    out[r] = s / static_cast<double>(av.cols());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t, const DenseMatrix& g) {
    DenseMatrix* ga = tp.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(ga->cols());
    for (std::size_t r = 0; r < ga->rows(); ++r)
      for (std::size_t c = 0; c < ga->cols(); ++c) (*ga)(r, c) += g[r] * inv;
  });
}

Var max_cols(Var a) {
  const DenseMatrix& av = a.value();
  if (av.cols() == 0) throw InputError("max_cols: no columns");
  DenseMatrix out(av.rows(), 1);
  std::vector<std::size_t> arg(av.rows(), 0);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 1; c < av.cols(); ++c)
      if (av(r, c) > av(r, arg[r])) arg[r] = c;
    out[r] = av(r, arg[r]);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, arg = std::move(arg)](Tape& tp, std::size_t, const DenseMatrix& g) {
                            DenseMatrix* ga = tp.grad_buffer(ia);
                            for (std::size_t r = 0; r < arg.size(); ++r) (*ga)(r, arg[r]) += g[r];
                          });
}

Var gather_rows_as_cols(Var table, std::span<const int> ids) {
  const DenseMatrix& tv = table.value();
  DenseMatrix out(tv.cols(), ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || static_cast<std::size_t>(ids[k]) >= tv.rows())
      throw InputError("gather_rows_as_cols: id out of range");
    for (std::size_t e = 0; e < tv.cols(); ++e) out(e, k) = tv(static_cast<std::size_t>(ids[k]), e);
  }
  const std::size_t it = table.id();
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape()->record(std::move(out), {table},
                              [it, idx = std::move(idx)](Tape& tp, std::size_t, const DenseMatrix& g) {
                                DenseMatrix* gt = tp.grad_buffer(it);
                                for (std::size_t k = 0; k < idx.size(); ++k)
                                  for (std::size_t e = 0; e < g.rows(); ++e)
                                    (*gt)(static_cast<std::size_t>(idx[k]), e) += g(e, k);
                              });
}

Var concat_cols(Var a, Var b) {
  const DenseMatrix& av = a.value();
  const DenseMatrix& bv = b.value();
  if (av.rows() != bv.rows()) throw InputError("concat_cols: row mismatch");
  DenseMatrix out(av.rows(), av.cols() + bv.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c);
    for (std::size_t c = 0; c < bv.cols(); ++c) out(r, av.cols() + c) = bv(r, c);
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t split = av.cols();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, split](Tape& tp, std::size_t, const DenseMatrix& g) {
    if (DenseMatrix* ga = tp.grad_buffer(ia))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < split; ++c) (*ga)(r, c) += g(r, c);
    if (DenseMatrix* gb = tp.grad_buffer(ib))
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = split; c < g.cols(); ++c) (*gb)(r, c - split) += g(r, c);
  });
}

Var hstack(std::span<const Var> parts) {
  if (parts.empty()) throw InputError("hstack: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InputError("hstack: row mismatch");
    cols += p.cols();
  }
  DenseMatrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t at = 0;
  for (const Var& p : parts) {
    const DenseMatrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, at + c) = pv(r, c);
    ids.push_back(p.id());
    offsets.push_back(at);
    at += pv.cols();
  }
  return parts[0].tape()->record(
      std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets)](Tape& tp, std::size_t,
                                                            const DenseMatrix& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          DenseMatrix* gk = tp.grad_buffer(ids[k]);
          if (gk == nullptr) continue;
          for (std::size_t r = 0; r < gk->rows(); ++r)
            for (std::size_t c = 0; c < gk->cols(); ++c) (*gk)(r, c) += g(r, offsets[k] + c);
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const DenseMatrix& av = a.value();
  if (begin + count > av.cols()) throw InputError("slice_cols: range out of bounds");
  DenseMatrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, begin](Tape& tp, std::size_t, const DenseMatrix& g) {
    DenseMatrix* ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(r, begin + c) += g(r, c);
  });
}

namespace {

// Softmax along "lines" of a matrix. A line is a row (by_row) or a column.
DenseMatrix softmax_lines(const DenseMatrix& a, double tau, bool by_row) {
  DenseMatrix out(a.rows(), a.cols());
  const std::size_t lines = by_row ? a.rows() : a.cols();
  const std::size_t len = by_row ? a.cols() : a.rows();
  auto at = [&](DenseMatrix& m, std::size_t line, std::size_t k) -> double& {
    return by_row ? m(line, k) : m(k, line);
  };
  for (std::size_t l = 0; l < lines; ++l) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) hi = std::max(hi, (by_row ? a(l, k) : a(k, l)) / tau);
    double total = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      const double x = by_row ? a(l, k) : a(k, l);
      at(out, l, k) = std::exp(x / tau - hi);
      total += at(out, l, k);
    }
    for (std::size_t k = 0; k < len; ++k) at(out, l, k) /= total;
  }
  return out;
}

Var softmax_impl(Var a, double tau, bool by_row) {
  if (!(tau > 0.0)) throw InputError("softmax: tau must be positive");
  DenseMatrix out = softmax_lines(a.value(), tau, by_row);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, tau, by_row](Tape& tp, std::size_t self,
                                                                 const DenseMatrix& g) {
    // dx = y * (g - <y, g>_line) / tau
    const DenseMatrix& y = tp.value(self);
    DenseMatrix* ga = tp.grad_buffer(ia);
    const std::size_t lines = by_row ? y.rows() : y.cols();
    const std::size_t len = by_row ? y.cols() : y.rows();
    for (std::size_t l = 0; l < lines; ++l) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k)
        dot += by_row ? y(l, k) * g(l, k) : y(k, l) * g(k, l);
      for (std::size_t k = 0; k < len; ++k) {
        if (by_row)
          (*ga)(l, k) += y(l, k) * (g(l, k) - dot) / tau;
        else
          (*ga)(k, l) += y(k, l) * (g(k, l) - dot) / tau;
      }
    }
  });
}

}  // namespace

Var softmax_rows(Var a, double tau) { return softmax_impl(a, tau, true); }
Var softmax_cols(Var a, double tau) { return softmax_impl(a, tau, false); }

Var cosine_cols(Var a, Var b) {
  const DenseMatrix& av = a.value();
  const DenseMatrix& bv = b.value();
  require_same_shape(av, bv, "cosine_cols");
  const std::size_t n = av.cols();
  DenseMatrix out(1, n);
  std::vector<double> na(n), nb(n);
  for (std::size_t c = 0; c < n; ++c) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t r = 0; r < av.rows(); ++r) {
      dot += av(r, c) * bv(r, c);
      aa += av(r, c) * av(r, c);
      bb += bv(r, c) * bv(r, c);
    }
    if (aa == 0.0 || bb == 0.0) throw DomainError("cosine: zero-norm input");
    na[c] = std::sqrt(aa);
    nb[c] = std::sqrt(bb);
    out[c] = dot / (na[c] * nb[c]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      std::move(out), {a, b},
      [ia, ib, na = std::move(na), nb = std::move(nb)](Tape& tp, std::size_t self,
                                                        const DenseMatrix& g) {
        // d cos / du = v/(|u||v|) - cos * u/|u|^2, symmetric in v.
        const DenseMatrix& av = tp.value(ia);
        const DenseMatrix& bv = tp.value(ib);
        const DenseMatrix& cs = tp.value(self);
        DenseMatrix* ga = tp.grad_buffer(ia);
        DenseMatrix* gb = tp.grad_buffer(ib);
        for (std::size_t c = 0; c < cs.cols(); ++c) {
          const double w = g[c];
          if (w == 0.0) continue;
          const double inv = 1.0 / (na[c] * nb[c]);
          for (std::size_t r = 0; r < av.rows(); ++r) {
            if (ga) (*ga)(r, c) += w * (bv(r, c) * inv - cs[c] * av(r, c) / (na[c] * na[c]));
            if (gb) (*gb)(r, c) += w * (av(r, c) * inv - cs[c] * bv(r, c) / (nb[c] * nb[c]));
          }
        }
      });
}

Var normalize_cols(Var a) {
  const DenseMatrix& av = a.value();
  DenseMatrix out(av.rows(), av.cols());
  std::vector<double> norms(av.cols());
  for (std::size_t c = 0; c < av.cols(); ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < av.rows(); ++r) ss += av(r, c) * av(r, c);
    if (ss == 0.0) throw DomainError("normalize: zero-norm column");
    norms[c] = std::sqrt(ss);
    for (std::size_t r = 0; r < av.rows(); ++r) out(r, c) = av(r, c) / norms[c];
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, norms = std::move(norms)](Tape& tp, std::size_t self,
                                                         const DenseMatrix& g) {
                            // d(u/|u|) = (g - <g, n> n) / |u|
                            const DenseMatrix& nv = tp.value(self);
                            DenseMatrix* ga = tp.grad_buffer(ia);
                            for (std::size_t c = 0; c < nv.cols(); ++c) {
                              double dot = 0.0;
                              for (std::size_t r = 0; r < nv.rows(); ++r) dot += g(r, c) * nv(r, c);
                              for (std::size_t r = 0; r < nv.rows(); ++r)
                                (*ga)(r, c) += (g(r, c) - dot * nv(r, c)) / norms[c];
                            }
                          });
}

Var log_sum_exp(Var a) {
  const DenseMatrix& av = a.value();
  if (av.empty()) throw DomainError("log_sum_exp: empty input");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : av.values()) hi = std::max(hi, v);
  double total = 0.0;
  for (double v : av.values()) total += std::exp(v - hi);
  const double lse = hi + std::log(total);
  const std::size_t ia = a.id();
  return a.tape()->record(DenseMatrix(1, 1, lse), {a},
                          [ia](Tape& tp, std::size_t self, const DenseMatrix& g) {
                            const DenseMatrix& av = tp.value(ia);
                            const double lse = tp.value(self)[0];
                            DenseMatrix* ga = tp.grad_buffer(ia);
                            for (std::size_t i = 0; i < av.size(); ++i)
                              (*ga)[i] += g[0] * std::exp(av[i] - lse);
                          });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape()->record(DenseMatrix(1, 1, s), {a},
                          [ia](Tape& tp, std::size_t, const DenseMatrix& g) {
                            DenseMatrix* ga = tp.grad_buffer(ia);
                            for (double& v : ga->values()) v += g[0];
                          });
}

Var mean(Var a) {
  if (a.value().empty()) throw InputError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var stack(std::span<const Var> scalars, std::size_t rows, std::size_t cols) {
  if (scalars.size() != rows * cols) throw InputError("stack: count does not match shape");
  if (scalars.empty()) throw InputError("stack: empty");
  DenseMatrix out(rows, cols);
  std::vector<std::size_t> ids(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw InputError("stack: inputs must be 1x1");
    out[i] = scalars[i].value()[0];
    ids[i] = scalars[i].id();
  }
  return scalars[0].tape()->record(std::move(out), scalars,
                                   [ids = std::move(ids)](Tape& tp, std::size_t,
                                                          const DenseMatrix& g) {
                                     for (std::size_t i = 0; i < ids.size(); ++i)
                                       if (DenseMatrix* gi = tp.grad_buffer(ids[i])) (*gi)[0] += g[i];
                                   });
}

}  // namespace macd::ad
