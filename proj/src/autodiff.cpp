// SPDX-License-Identifier: Apache-2.0
#include "lrdm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lrdm/kernels.hpp"

namespace lrdm {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Tape* tape_of(const Var& a, const Var& b) {
  Tape* t = a.tape() ? a.tape() : b.tape();
  if (a.tape() && b.tape() && a.tape() != b.tape()) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  if (!t) throw std::invalid_argument("operand not attached to a tape");
  return t;
}

Tape* tape_of(const Var& a) {
  if (!a.valid() || !a.tape()) throw std::invalid_argument("operand not attached to a tape");
  return a.tape();
}

// Layout of a broadcast binary op: the output follows the larger operand,
// the smaller one repeats every `period` elements.
struct Broadcast {
  Shape out;
  bool a_small = false;
  bool b_small = false;
  std::size_t period_a = 0;
  std::size_t period_b = 0;
};

Broadcast broadcast(const char* op, const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Broadcast bc;
  bc.period_a = a.size();
  bc.period_b = b.size();
  if (sa == sb) {
    bc.out = sa;
  } else if (b.size() == 1 || is_suffix(sb, sa)) {
    bc.out = sa;
    bc.b_small = true;
  } else if (a.size() == 1 || is_suffix(sa, sb)) {
    bc.out = sb;
    bc.a_small = true;
  } else {
    shape_error(op, sa, sb);
  }
  if (bc.period_a == 0 || bc.period_b == 0) {
    if (a.size() != b.size()) shape_error(op, sa, sb);
  }
  return bc;
}

// Accumulate `g` (size n) into `dst` of size `period` by folding repeats.
void fold_into(std::span<double> dst, std::span<const double> g, double sign) {
  const std::size_t p = dst.size();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i % p] += sign * g[i];
}

template <class Fwd, class Bwd>
Var unary(const char* /*op*/, const Var& a, Fwd fwd, Bwd bwd) {
  Tape* tape = tape_of(a);
  Tensor out(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  TensorPtr an = a.node();
  return tape->record(std::move(out), a.requires_grad(), [an, bwd](const Tensor& o) {
    auto ag = an->grad();
    auto og = o.grad();
    auto x = an->values();
    auto y = o.values();
    for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += og[i] * bwd(x[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw std::invalid_argument("Tensor: " + std::to_string(values_.size()) +
                                " values for shape " + shape_str(shape_));
  }
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw std::invalid_argument("Tensor::item on tensor of shape " + shape_str(shape_));
  }
  return values_[0];
}

void Tensor::ensure_grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

Matrix Tensor::to_matrix() const {
  if (rank() == 2) return Matrix(shape_[0], shape_[1], values_);
  if (rank() == 1) return Matrix(1, shape_[0], values_);
  if (rank() == 0) return Matrix(1, 1, values_);
  throw std::invalid_argument("to_matrix on tensor of shape " + shape_str(shape_));
}

TensorPtr make_parameter(Shape shape, std::vector<double> values) {
  auto p = std::make_shared<Tensor>(std::move(shape), std::move(values));
  p->ensure_grad();
  return p;
}

// ---------------------------------------------------------------- Tape

Var Tape::constant(Tensor value) {
  return Var(this, std::make_shared<Tensor>(std::move(value)), false);
}

Var Tape::param(const TensorPtr& p) {
  if (recording_) p->ensure_grad();
  return Var(this, p, recording_);
}

Var Tape::record(Tensor out, bool requires_grad,
                 std::function<void(const Tensor&)> backward_fn) {
  auto node = std::make_shared<Tensor>(std::move(out));
  const bool track = recording_ && requires_grad;
  if (track) {
    node->ensure_grad();
    nodes_.push_back({node, std::move(backward_fn)});
  }
  return Var(this, node, track);
}

void Tape::backward(const Var& loss) {
  if (!loss.valid() || loss.tape() != this) {
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  // Nodes recorded after the loss cannot contribute to it.
  std::size_t end = nodes_.size();
  while (end > 0 && nodes_[end - 1].output != loss.node()) --end;
  if (end == 0) {
    // The loss is itself a parameter leaf.
    loss.node()->grad()[0] += 1.0;
    return;
  }
  for (auto& n : nodes_) n.output->zero_grad();
  loss.node()->grad()[0] = 1.0;
  for (std::size_t i = end; i-- > 0;) nodes_[i].backward(*nodes_[i].output);
}

// ---------------------------------------------------------------- primitives

namespace {

enum class BinOp { Add, Sub, Mul };

Var binary(const char* name, BinOp op, const Var& a, const Var& b) {
  Tape* tape = tape_of(a, b);
  const Broadcast bc = broadcast(name, a, b);
  Tensor out(bc.out);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  const std::size_t pa = bc.period_a, pb = bc.period_b;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double x = av[i % pa];
    const double y = bv[i % pb];
    switch (op) {
      case BinOp::Add: ov[i] = x + y; break;
      case BinOp::Sub: ov[i] = x - y; break;
      case BinOp::Mul: ov[i] = x * y; break;
    }
  }
  TensorPtr an = a.node(), bn = b.node();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape->record(std::move(out), ga || gb, [an, bn, ga, gb, op](const Tensor& o) {
    auto og = o.grad();
    const std::size_t pa = an->size(), pb = bn->size();
    if (op == BinOp::Mul) {
      auto av = an->values();
      auto bv = bn->values();
      if (ga) {
        auto g = an->grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i % pa] += og[i] * bv[i % pb];
      }
      if (gb) {
        auto g = bn->grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i % pb] += og[i] * av[i % pa];
      }
      return;
    }
    if (ga) fold_into(an->grad(), og, 1.0);
    if (gb) fold_into(bn->grad(), og, op == BinOp::Sub ? -1.0 : 1.0);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary("add", BinOp::Add, a, b); }
Var sub(const Var& a, const Var& b) { return binary("sub", BinOp::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary("mul", BinOp::Mul, a, b); }

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  Tape* tape = tape_of(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  Tensor out({n, m});
  kernels::parallel::matmul(a.values().data(), b.values().data(), out.values().data(), n, k, m);
  TensorPtr an = a.node(), bn = b.node();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape->record(std::move(out), ga || gb, [an, bn, ga, gb, n, k, m](const Tensor& o) {
    const double* g = o.grad().data();
    if (ga) kernels::parallel::matmul_acc_bt(g, bn->values().data(), an->grad().data(), n, m, k);
    if (gb) kernels::parallel::matmul_acc_at(an->values().data(), g, bn->grad().data(), n, k, m);
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  Tape* tape = tape_of(parts.front());
  const Shape& s0 = parts.front().shape();
  if (s0.empty()) throw std::invalid_argument("concat_last: scalar input");
  Shape lead(s0.begin(), s0.end() - 1);
  const std::size_t rows = shape_size(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw std::invalid_argument("concat_last: operands on different tapes");
    const Shape& s = p.shape();
    if (s.size() != s0.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      shape_error("concat_last", s0, s);
    }
    widths.push_back(s.back());
    total += s.back();
    any_grad = any_grad || p.requires_grad();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  auto ov = out.values();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  ov.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
  }
  std::vector<TensorPtr> nodes;
  std::vector<bool> tracks;
  for (const Var& p : parts) {
    nodes.push_back(p.node());
    tracks.push_back(p.requires_grad());
  }
  return tape->record(std::move(out), any_grad, [nodes, tracks, widths, rows, total](const Tensor& o) {
    auto og = o.grad();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t w = widths[k];
      if (tracks[k]) {
        auto g = nodes[k]->grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < w; ++j) g[r * w + j] += og[r * total + offset + j];
        }
      }
      offset += w;
    }
  });
}

Var sum(const Var& a) {
  Tape* tape = tape_of(a);
  double s = 0.0;
  for (double v : a.values()) s += v;
  TensorPtr an = a.node();
  return tape->record(Tensor::scalar(s), a.requires_grad(), [an](const Tensor& o) {
    const double g = o.grad()[0];
    for (double& x : an->grad()) x += g;
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum_last(const Var& a) {
  Tape* tape = tape_of(a);
  const Shape& s = a.shape();
  if (s.empty()) throw std::invalid_argument("sum_last: scalar input");
  const std::size_t m = s.back();
  Shape out_shape(s.begin(), s.end() - 1);
  Tensor out(out_shape);
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < ov.size(); ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += av[r * m + j];
    ov[r] = acc;
  }
  TensorPtr an = a.node();
  return tape->record(std::move(out), a.requires_grad(), [an, m](const Tensor& o) {
    auto og = o.grad();
    auto g = an->grad();
    for (std::size_t r = 0; r < og.size(); ++r) {
      for (std::size_t j = 0; j < m; ++j) g[r * m + j] += og[r];
    }
  });
}

Var square(const Var& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var exp(const Var& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  }
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var silu(const Var& a) {
  return unary(
      "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var relu(const Var& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

}  // namespace lrdm
