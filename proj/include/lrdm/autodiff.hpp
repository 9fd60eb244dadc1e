// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lrdm/matrix.hpp"

namespace lrdm {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Shape-carrying array of doubles with an optional gradient buffer of the
/// same length. Row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor from_matrix(const Matrix& m) { return Tensor({m.rows, m.cols}, m.data); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double item() const;

  bool has_grad() const { return !grad_.empty() || values_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void ensure_grad();
  void zero_grad();

  /// Rank-2 tensors map directly; rank-1 becomes a single row.
  Matrix to_matrix() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

using TensorPtr = std::shared_ptr<Tensor>;

/// Allocates a trainable parameter (gradient buffer present, zeroed).
TensorPtr make_parameter(Shape shape, std::vector<double> values);

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, TensorPtr node, bool requires_grad)
      : tape_(tape), node_(std::move(node)), requires_grad_(requires_grad) {}

  bool valid() const { return node_ != nullptr; }
  Tape* tape() const { return tape_; }
  const TensorPtr& node() const { return node_; }
  bool requires_grad() const { return requires_grad_; }

  const Shape& shape() const { return node_->shape(); }
  std::size_t size() const { return node_->size(); }
  std::span<const double> values() const { return node_->values(); }
  std::span<const double> grad() const { return node_->grad(); }
  double item() const { return node_->item(); }
  Matrix to_matrix() const { return node_->to_matrix(); }

 private:
  Tape* tape_ = nullptr;
  TensorPtr node_;
  bool requires_grad_ = false;
};

/// Dynamic tape: primitives append a node carrying a backward closure;
/// `backward` replays them in reverse. A tape constructed with
/// `recording=false` only evaluates values (inference).
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var constant(const Matrix& m) { return constant(Tensor::from_matrix(m)); }
  Var scalar(double v) { return constant(Tensor::scalar(v)); }
  /// Leaf bound to a persistent parameter; gradients accumulate into it.
  Var param(const TensorPtr& p);

  /// Populates gradients of every parameter reachable from `loss`.
  /// Intermediate gradients are reset first, so calling twice doubles the
  /// parameter gradients exactly.
  void backward(const Var& loss);

  // Used by the primitives.
  Var record(Tensor out, bool requires_grad, std::function<void(const Tensor& out)> backward_fn);

 private:
  struct Node {
    TensorPtr output;
    std::function<void(const Tensor&)> backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

// Primitives. Binary elementwise ops broadcast when one operand's shape is a
// trailing suffix of the other's (or it holds a single value); anything else
// is a shape error naming both shapes and the op.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
/// [n,k] x [k,m] -> [n,m]
Var matmul(const Var& a, const Var& b);
/// Concatenate along the last axis; all leading dims must agree.
Var concat_last(const std::vector<Var>& parts);
Var sum(const Var& a);
Var mean(const Var& a);
/// Reduce the last axis: [..., m] -> [...]
Var sum_last(const Var& a);
Var square(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var silu(const Var& a);
Var relu(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace lrdm
