#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dittryon/tensor.hpp"

namespace dittryon {

/// Differentiable primitives. Shape rules:
///   add/sub/mul      equal shapes, or one operand rank-0 (scalar broadcast)
///   matmul           (n x k) @ (k x m)
///   mean/sum         any -> rank-0
///   mse              equal shapes -> rank-0, mean of squared differences
///   concat_axis      all extents equal except `axis`
///   slice_axis       [begin, end) along `axis`
///   softmax_lastdim  any rank >= 1, normalizes the last axis
///   layer_norm       x, or (x, gain, bias) with gain/bias of size last-dim
///   gelu/silu/scale  elementwise
///   transpose        rank-2
///   add_row/mul_row  (n x d) with a length-d row vector applied to every row
///   gather_rows      (V x d) table, `indices` -> (len x d)
enum class Primitive {
  add,
  sub,
  mul,
  matmul,
  mean,
  sum,
  mse,
  concat_axis,
  slice_axis,
  softmax_lastdim,
  layer_norm,
  gelu,
  silu,
  scale,
  transpose,
  add_row,
  mul_row,
  gather_rows,
};

std::string_view primitive_name(Primitive kind);

struct PrimitiveAttrs {
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  double factor = 1.0;
  double epsilon = 1e-5;
  std::vector<std::size_t> indices;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
/// has not been reset.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar loss with respect to every requires_grad leaf.
class GradientMap {
 public:
  const Tensor& operator[](const Var& leaf) const;
  const Tensor& at(std::size_t leaf_id) const;
  bool contains(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

  void set(std::size_t leaf_id, Tensor grad) { grads_.insert_or_assign(leaf_id, std::move(grad)); }

 private:
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Evaluates a primitive on plain tensors (no recording).
Tensor evaluate_primitive(Primitive kind, std::span<const Tensor* const> inputs, const PrimitiveAttrs& attrs);

/// Records operations for reverse-mode differentiation. One tape per training
/// step; it owns every intermediate value. Not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var apply(Primitive kind, std::span<const Var> inputs, const PrimitiveAttrs& attrs = {});

  /// Accumulates d(loss)/d(leaf) over all paths, in reverse recording order.
  GradientMap backward(const Var& loss) const;

  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

 private:
  struct Node {
    Tensor value;
    bool is_leaf = true;
    bool requires_grad = false;
    Primitive kind = Primitive::add;
    std::vector<std::size_t> inputs;
    PrimitiveAttrs attrs;
    Tensor aux;  // layer_norm: per-row inverse std
  };

  void backprop_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads,
                     std::vector<bool>& has_grad) const;

  std::vector<Node> nodes_;
};

Var apply_primitive(Tape& tape, Primitive kind, std::span<const Var> inputs, const PrimitiveAttrs& attrs = {});

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var mean(const Var& x);
Var sum(const Var& x);
Var mse(const Var& a, const Var& b);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);
Var softmax(const Var& x);
Var layer_norm(const Var& x, double eps);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
Var gelu(const Var& x);
Var silu(const Var& x);
Var scale(const Var& x, double factor);
Var transpose(const Var& x);
Var add_row(const Var& x, const Var& row);
Var mul_row(const Var& x, const Var& row);
Var gather_rows(const Var& table, std::vector<std::size_t> indices);

}  // namespace ops

/// Scalar-valued function of one tensor, expressed on a tape.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// Throws OracleError if f is not deterministic, ContractError if h is outside
/// [1e-6, 1e-3].
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace dittryon
