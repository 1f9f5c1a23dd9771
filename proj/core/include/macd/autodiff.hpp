#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "macd/dense_matrix.hpp"

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// every intermediate; backward() walks it in reverse and accumulates adjoints
// into nodes that depend on at least one variable. Constants never receive
// gradients, so anything built purely from constants costs no backward work.
namespace macd::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const DenseMatrix& value() const;
  // Adjoint after Tape::backward; zero-sized if the node never received one.
  const DenseMatrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the tape, the id of the node being differentiated, and its adjoint.
  using Backward = std::function<void(Tape&, std::size_t self, const DenseMatrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(DenseMatrix value);
  Var constant(DenseMatrix value);

  // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to all variables.
  void backward(Var out);

  const DenseMatrix& value(std::size_t id) const { return nodes_[id].value; }
  const DenseMatrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Records an op result. The backward closure is dropped when no input needs
  // a gradient.
  Var record(DenseMatrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(DenseMatrix value, std::span<const Var> inputs, Backward backward);

  // Gradient buffer for node id, zero-initialised on first use. Returns nullptr
  // when the node is a constant so ops can skip the work.
  DenseMatrix* grad_buffer(std::size_t id);

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
// a (r x c) plus column vector b (r x 1) added to every column.
Var add_col(Var a, Var b);
// Row-wise mean over columns: r x c -> r x 1.
Var mean_cols(Var a);
// Row-wise max over columns: r x c -> r x 1.
Var max_cols(Var a);
// Selects rows ids[k] of table (V x e) and lays them out as columns: e x |ids|.
Var gather_rows_as_cols(Var table, std::span<const int> ids);
Var concat_cols(Var a, Var b);
// Places same-height inputs side by side.
Var hstack(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
// Softmax of a/tau along each row (rows sum to 1) or each column.
Var softmax_rows(Var a, double tau = 1.0);
Var softmax_cols(Var a, double tau = 1.0);
// Cosine between matching columns of a and b: 1 x c. Zero norm -> DomainError.
Var cosine_cols(Var a, Var b);
// Scales every column to unit L2 norm. Zero norm -> DomainError.
Var normalize_cols(Var a);
// log sum exp over all entries -> 1 x 1.
Var log_sum_exp(Var a);
Var sum(Var a);
Var mean(Var a);
// Assembles 1x1 vars into a rows x cols matrix (row-major order).
Var stack(std::span<const Var> scalars, std::size_t rows, std::size_t cols);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace macd::ad
