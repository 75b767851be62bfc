#include "dittryon/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace dittryon {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

[[noreturn]] void dim_error(Primitive kind, const std::string& what) {
  throw DimensionError(std::string(primitive_name(kind)) + ": " + what);
}

void expect_arity(Primitive kind, std::size_t got, std::size_t want) {
  if (got != want) {
    dim_error(kind, "expected " + std::to_string(want) + " inputs, got " + std::to_string(got));
  }
}

bool is_scalar(const Tensor& t) { return t.rank() == 0; }

// Splits a shape around `axis` into (outer, extent, inner) for row-major views.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_deriv(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor elementwise_binary(Primitive kind, const Tensor& a, const Tensor& b) {
  auto op = [kind](double x, double y) {
    switch (kind) {
      case Primitive::add: return x + y;
      case Primitive::sub: return x - y;
      default: return x * y;
    }
  };
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = op(a[i], b[i]);
    return out;
  }
  if (is_scalar(b)) {
    Tensor out(a.shape());
    const double s = b[0];
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = op(a[i], s);
    return out;
  }
  if (is_scalar(a)) {
    Tensor out(b.shape());
    const double s = a[0];
    for (std::size_t i = 0; i < b.numel(); ++i) out[i] = op(s, b[i]);
    return out;
  }
  dim_error(kind, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " are incompatible");
}

// Normalizes the last axis; writes per-row inverse std into `rstd` when given.
Tensor layer_norm_forward(const Tensor& x, const Tensor* gain, const Tensor* bias, double eps, Tensor* rstd) {
  if (!(eps > 0.0)) dim_error(Primitive::layer_norm, "epsilon must be positive");
  if (x.rank() < 1) dim_error(Primitive::layer_norm, "input must have rank >= 1");
  const std::size_t d = last_dim(x);
  const std::size_t rows = x.numel() / d;
  if (gain && (gain->numel() != d || bias->numel() != d)) {
    dim_error(Primitive::layer_norm, "gain/bias must have " + std::to_string(d) + " elements");
  }
  Tensor out(x.shape());
  if (rstd) *rstd = Tensor({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    if (rstd) (*rstd)[r] = inv;
    double* o = out.data().data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      double v = (row[j] - mu) * inv;
      if (gain) v = v * (*gain)[j] + (*bias)[j];
      o[j] = v;
    }
  }
  return out;
}

Tensor forward(Primitive kind, std::span<const Tensor* const> in, const PrimitiveAttrs& attrs, Tensor* aux) {
  switch (kind) {
    case Primitive::add:
    case Primitive::sub:
    case Primitive::mul:
      expect_arity(kind, in.size(), 2);
      return elementwise_binary(kind, *in[0], *in[1]);

    case Primitive::matmul: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        dim_error(kind, "cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
      }
      Tensor out({a.dim(0), b.dim(1)});
      as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
      return out;
    }

    case Primitive::mean:
    case Primitive::sum: {
      expect_arity(kind, in.size(), 1);
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      if (kind == Primitive::mean) s /= static_cast<double>(in[0]->numel());
      return Tensor::scalar(s);
    }

    case Primitive::mse: {
      expect_arity(kind, in.size(), 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.shape() != b.shape()) {
        dim_error(kind, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
      }
      double s = 0.0;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
      }
      return Tensor::scalar(s / static_cast<double>(a.numel()));
    }

    case Primitive::concat_axis: {
      if (in.empty()) dim_error(kind, "no inputs");
      const Shape& ref = in[0]->shape();
      if (attrs.axis >= ref.size()) dim_error(kind, "axis out of range");
      Shape out_shape = ref;
      out_shape[attrs.axis] = 0;
      for (const Tensor* t : in) {
        if (t->rank() != ref.size()) dim_error(kind, "rank mismatch");
        for (std::size_t i = 0; i < ref.size(); ++i) {
          if (i != attrs.axis && t->shape()[i] != ref[i]) {
            dim_error(kind, "shapes " + shape_str(ref) + " and " + shape_str(t->shape()) + " disagree off-axis");
          }
        }
        out_shape[attrs.axis] += t->shape()[attrs.axis];
      }
      Tensor out(out_shape);
      const AxisView ov = axis_view(out_shape, attrs.axis);
      std::size_t offset = 0;
      for (const Tensor* t : in) {
        const AxisView tv = axis_view(t->shape(), attrs.axis);
        const std::size_t chunk = tv.extent * tv.inner;
        for (std::size_t o = 0; o < tv.outer; ++o) {
          std::copy_n(t->data().data() + o * chunk, chunk,
                      out.data().data() + o * ov.extent * ov.inner + offset * ov.inner);
        }
        offset += tv.extent;
      }
      return out;
    }

    case Primitive::slice_axis: {
      expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      if (attrs.axis >= x.rank()) dim_error(kind, "axis out of range");
      if (attrs.begin >= attrs.end || attrs.end > x.shape()[attrs.axis]) {
        dim_error(kind, "range [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) +
                            ") invalid for extent " + std::to_string(x.shape()[attrs.axis]));
      }
      Shape out_shape = x.shape();
      out_shape[attrs.axis] = attrs.end - attrs.begin;
      Tensor out(out_shape);
      const AxisView xv = axis_view(x.shape(), attrs.axis);
      const std::size_t chunk = (attrs.end - attrs.begin) * xv.inner;
      for (std::size_t o = 0; o < xv.outer; ++o) {
        std::copy_n(x.data().data() + o * xv.extent * xv.inner + attrs.begin * xv.inner, chunk,
                    out.data().data() + o * chunk);
      }
      return out;
    }

    case Primitive::softmax_lastdim: {
      expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      if (x.rank() < 1) dim_error(kind, "input must have rank >= 1");
      const std::size_t d = last_dim(x);
      Tensor out(x.shape());
      for (std::size_t r = 0; r < x.numel() / d; ++r) {
        const double* row = x.data().data() + r * d;
        double* o = out.data().data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          o[j] = std::exp(row[j] - mx);
          z += o[j];
        }
        for (std::size_t j = 0; j < d; ++j) o[j] /= z;
      }
      return out;
    }

    case Primitive::layer_norm: {
      if (in.size() != 1 && in.size() != 3) dim_error(kind, "expected x or (x, gain, bias)");
      const Tensor* gain = in.size() == 3 ? in[1] : nullptr;
      const Tensor* bias = in.size() == 3 ? in[2] : nullptr;
      return layer_norm_forward(*in[0], gain, bias, attrs.epsilon, aux);
    }

    case Primitive::gelu:
    case Primitive::silu:
    case Primitive::scale: {
      expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        out[i] = kind == Primitive::gelu ? gelu_value(v) : kind == Primitive::silu ? v * sigmoid(v) : v * attrs.factor;
      }
      return out;
    }

    case Primitive::transpose: {
      expect_arity(kind, in.size(), 1);
      const Tensor& x = *in[0];
      if (x.rank() != 2) dim_error(kind, "input must be rank-2");
      Tensor out({x.dim(1), x.dim(0)});
      as_matrix(out) = as_matrix(x).transpose();
      return out;
    }

    case Primitive::add_row:
    case Primitive::mul_row: {
      expect_arity(kind, in.size(), 2);
      const Tensor& x = *in[0];
      const Tensor& r = *in[1];
      if (x.rank() != 2 || r.numel() != x.dim(1) || r.rank() > 2 || (r.rank() == 2 && r.dim(0) != 1)) {
        dim_error(kind, "row vector " + shape_str(r.shape()) + " does not fit " + shape_str(x.shape()));
      }
      Tensor out(x.shape());
      const std::size_t d = x.dim(1);
      for (std::size_t i = 0; i < x.dim(0); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          out[i * d + j] = kind == Primitive::add_row ? x[i * d + j] + r[j] : x[i * d + j] * r[j];
        }
      }
      return out;
    }

    case Primitive::gather_rows: {
      expect_arity(kind, in.size(), 1);
      const Tensor& table = *in[0];
      if (table.rank() != 2) dim_error(kind, "table must be rank-2");
      if (attrs.indices.empty()) dim_error(kind, "no indices");
      const std::size_t d = table.dim(1);
      Tensor out({attrs.indices.size(), d});
      for (std::size_t k = 0; k < attrs.indices.size(); ++k) {
        const std::size_t idx = attrs.indices[k];
        if (idx >= table.dim(0)) dim_error(kind, "index " + std::to_string(idx) + " out of range");
        std::copy_n(table.data().data() + idx * d, d, out.data().data() + k * d);
      }
      return out;
    }
  }
  dim_error(kind, "unknown primitive");
}

void accumulate(std::vector<Tensor>& grads, std::vector<bool>& has_grad, std::size_t id, Tensor g) {
  if (!has_grad[id]) {
    grads[id] = std::move(g);
    has_grad[id] = true;
    return;
  }
  Tensor& dst = grads[id];
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
}

// Reduces a broadcast gradient back onto a scalar operand.
Tensor reduce_to(const Tensor& operand, Tensor g) {
  if (is_scalar(operand) && g.numel() != 1) {
    double s = 0.0;
    for (double v : g.data()) s += v;
    return Tensor::scalar(s);
  }
  return g;
}

}  // namespace

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::matmul: return "matmul";
    case Primitive::mean: return "mean";
    case Primitive::sum: return "sum";
    case Primitive::mse: return "mse";
    case Primitive::concat_axis: return "concat_axis";
    case Primitive::slice_axis: return "slice_axis";
    case Primitive::softmax_lastdim: return "softmax_lastdim";
    case Primitive::layer_norm: return "layer_norm";
    case Primitive::gelu: return "gelu";
    case Primitive::silu: return "silu";
    case Primitive::scale: return "scale";
    case Primitive::transpose: return "transpose";
    case Primitive::add_row: return "add_row";
    case Primitive::mul_row: return "mul_row";
    case Primitive::gather_rows: return "gather_rows";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& GradientMap::operator[](const Var& leaf) const { return at(leaf.id()); }

const Tensor& GradientMap::at(std::size_t leaf_id) const {
  auto it = grads_.find(leaf_id);
  if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(leaf_id));
  return it->second;
}

Tensor evaluate_primitive(Primitive kind, std::span<const Tensor* const> inputs, const PrimitiveAttrs& attrs) {
  Tensor out = forward(kind, inputs, attrs, nullptr);
  if (!out.all_finite()) {
    throw NumericError(std::string(primitive_name(kind)) + " produced a non-finite value");
  }
  return out;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("leaf tensor contains a non-finite value");
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::apply(Primitive kind, std::span<const Var> inputs, const PrimitiveAttrs& attrs) {
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  bool needs_grad = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError("input recorded on a different tape");
    values.push_back(&nodes_[v.id()].value);
    needs_grad = needs_grad || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.value = forward(kind, values, attrs, needs_grad ? &n.aux : nullptr);
  if (!n.value.all_finite()) {
    throw NumericError(std::string(primitive_name(kind)) + " produced a non-finite value");
  }
  n.is_leaf = false;
  n.requires_grad = needs_grad;
  n.kind = kind;
  if (needs_grad) {
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id());
    n.attrs = attrs;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backprop_node(const Node& node, const Tensor& g, std::vector<Tensor>& grads,
                         std::vector<bool>& has_grad) const {
  auto input = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  auto wants = [&](std::size_t k) { return nodes_[node.inputs[k]].requires_grad; };
  auto push = [&](std::size_t k, Tensor t) { accumulate(grads, has_grad, node.inputs[k], std::move(t)); };

  switch (node.kind) {
    case Primitive::add:
    case Primitive::sub: {
      if (wants(0)) push(0, reduce_to(input(0), g));
      if (wants(1)) {
        Tensor gb = g;
        if (node.kind == Primitive::sub) {
          for (auto& v : gb.data()) v = -v;
        }
        push(1, reduce_to(input(1), std::move(gb)));
      }
      break;
    }
    case Primitive::mul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      if (wants(0)) {
        const Tensor* ptrs[] = {&g, &b};
        push(0, reduce_to(a, forward(Primitive::mul, ptrs, {}, nullptr)));
      }
      if (wants(1)) {
        const Tensor* ptrs[] = {&g, &a};
        push(1, reduce_to(b, forward(Primitive::mul, ptrs, {}, nullptr)));
      }
      break;
    }
    case Primitive::matmul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      if (wants(0)) {
        Tensor ga(a.shape());
        as_matrix(ga).noalias() = as_matrix(g) * as_matrix(b).transpose();
        push(0, std::move(ga));
      }
      if (wants(1)) {
        Tensor gb(b.shape());
        as_matrix(gb).noalias() = as_matrix(a).transpose() * as_matrix(g);
        push(1, std::move(gb));
      }
      break;
    }
    case Primitive::mean:
    case Primitive::sum: {
      const Tensor& x = input(0);
      double v = g[0];
      if (node.kind == Primitive::mean) v /= static_cast<double>(x.numel());
      push(0, Tensor(x.shape(), v));
      break;
    }
    case Primitive::mse: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const double c = 2.0 * g[0] / static_cast<double>(a.numel());
      Tensor ga(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] = c * (a[i] - b[i]);
      if (wants(1)) {
        Tensor gb(b.shape());
        for (std::size_t i = 0; i < b.numel(); ++i) gb[i] = -ga[i];
        push(1, std::move(gb));
      }
      if (wants(0)) push(0, std::move(ga));
      break;
    }
    case Primitive::concat_axis: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t extent = input(k).shape()[node.attrs.axis];
        if (wants(k)) {
          PrimitiveAttrs sl;
          sl.axis = node.attrs.axis;
          sl.begin = offset;
          sl.end = offset + extent;
          const Tensor* ptrs[] = {&g};
          push(k, forward(Primitive::slice_axis, ptrs, sl, nullptr));
        }
        offset += extent;
      }
      break;
    }
    case Primitive::slice_axis: {
      const Tensor& x = input(0);
      Tensor gx(x.shape());
      const AxisView xv = axis_view(x.shape(), node.attrs.axis);
      const std::size_t chunk = (node.attrs.end - node.attrs.begin) * xv.inner;
      for (std::size_t o = 0; o < xv.outer; ++o) {
        std::copy_n(g.data().data() + o * chunk, chunk,
                    gx.data().data() + o * xv.extent * xv.inner + node.attrs.begin * xv.inner);
      }
      push(0, std::move(gx));
      break;
    }
    case Primitive::softmax_lastdim: {
      const Tensor& y = node.value;
      const std::size_t d = last_dim(y);
      Tensor gx(y.shape());
      for (std::size_t r = 0; r < y.numel() / d; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] = y[r * d + j] * (g[r * d + j] - dot);
      }
      push(0, std::move(gx));
      break;
    }
    case Primitive::layer_norm: {
      const Tensor& x = input(0);
      const bool affine = node.inputs.size() == 3;
      const std::size_t d = last_dim(x);
      const std::size_t rows = x.numel() / d;
      const Tensor& rstd = node.aux;
      Tensor gx(x.shape());
      Tensor ggain({d}), gbias({d});
      std::vector<double> xhat(d), gy(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (row[j] - mu) * rstd[r];
          gy[j] = g[r * d + j];
          if (affine) {
            ggain[j] += gy[j] * xhat[j];
            gbias[j] += gy[j];
            gy[j] *= input(1)[j];
          }
          sum_g += gy[j];
          sum_gx += gy[j] * xhat[j];
        }
        const double dd = static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] = rstd[r] / dd * (dd * gy[j] - sum_g - xhat[j] * sum_gx);
        }
      }
      if (wants(0)) push(0, std::move(gx));
      if (affine) {
        if (wants(1)) push(1, ggain.reshaped(input(1).shape()));
        if (wants(2)) push(2, gbias.reshaped(input(2).shape()));
      }
      break;
    }
    case Primitive::gelu:
    case Primitive::silu:
    case Primitive::scale: {
      const Tensor& x = input(0);
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        double dv;
        if (node.kind == Primitive::gelu) {
          dv = gelu_deriv(x[i]);
        } else if (node.kind == Primitive::silu) {
          const double s = sigmoid(x[i]);
          dv = s + x[i] * s * (1.0 - s);
        } else {
          dv = node.attrs.factor;
        }
        gx[i] = g[i] * dv;
      }
      push(0, std::move(gx));
      break;
    }
    case Primitive::transpose: {
      Tensor gx(input(0).shape());
      as_matrix(gx) = as_matrix(g).transpose();
      push(0, std::move(gx));
      break;
    }
    case Primitive::add_row:
    case Primitive::mul_row: {
      const Tensor& x = input(0);
      const Tensor& r = input(1);
      const std::size_t n = x.dim(0), d = x.dim(1);
      if (wants(0)) {
        if (node.kind == Primitive::add_row) {
          push(0, g);
        } else {
          Tensor gx(x.shape());
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] = g[i * d + j] * r[j];
          }
          push(0, std::move(gx));
        }
      }
      if (wants(1)) {
        Tensor gr(r.shape());
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            gr[j] += node.kind == Primitive::add_row ? g[i * d + j] : g[i * d + j] * x[i * d + j];
          }
        }
        push(1, std::move(gr));
      }
      break;
    }
    case Primitive::gather_rows: {
      const Tensor& table = input(0);
      const std::size_t d = table.dim(1);
      Tensor gt(table.shape());
      for (std::size_t k = 0; k < node.attrs.indices.size(); ++k) {
        const std::size_t idx = node.attrs.indices[k];
        for (std::size_t j = 0; j < d; ++j) gt[idx * d + j] += g[k * d + j];
      }
      push(0, std::move(gt));
      break;
    }
  }
}

GradientMap Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw ContractError("loss recorded on a different tape");
  const Node& ln = nodes_.at(loss.id());
  if (ln.value.numel() != 1 || ln.value.rank() != 0) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(ln.value.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> has_grad(nodes_.size(), false);
  if (ln.requires_grad) {
    grads[loss.id()] = Tensor::scalar(1.0);
    has_grad[loss.id()] = true;
  }
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!has_grad[id] || n.is_leaf || !n.requires_grad) continue;
    backprop_node(n, grads[id], grads, has_grad);
    grads[id] = Tensor();  // release intermediate gradient memory
  }
  GradientMap out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf || !n.requires_grad) continue;
    out.set(id, has_grad[id] ? std::move(grads[id]) : Tensor(n.value.shape()));
  }
  return out;
}

Var apply_primitive(Tape& tape, Primitive kind, std::span<const Var> inputs, const PrimitiveAttrs& attrs) {
  return tape.apply(kind, inputs, attrs);
}

namespace ops {

namespace {
Var unary(Primitive kind, const Var& x, const PrimitiveAttrs& attrs = {}) {
  const Var in[] = {x};
  return x.tape().apply(kind, in, attrs);
}
Var binary(Primitive kind, const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return a.tape().apply(kind, in);
}
}  // namespace

Var add(const Var& a, const Var& b) { return binary(Primitive::add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Primitive::sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Primitive::mul, a, b); }
Var matmul(const Var& a, const Var& b) { return binary(Primitive::matmul, a, b); }
Var mean(const Var& x) { return unary(Primitive::mean, x); }
Var sum(const Var& x) { return unary(Primitive::sum, x); }
Var mse(const Var& a, const Var& b) { return binary(Primitive::mse, a, b); }

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat_axis: no inputs");
  if (parts.size() == 1) return parts[0];
  PrimitiveAttrs attrs;
  attrs.axis = axis;
  return parts[0].tape().apply(Primitive::concat_axis, parts, attrs);
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  PrimitiveAttrs attrs;
  attrs.axis = axis;
  attrs.begin = begin;
  attrs.end = end;
  return unary(Primitive::slice_axis, x, attrs);
}

Var softmax(const Var& x) { return unary(Primitive::softmax_lastdim, x); }

Var layer_norm(const Var& x, double eps) {
  PrimitiveAttrs attrs;
  attrs.epsilon = eps;
  return unary(Primitive::layer_norm, x, attrs);
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  PrimitiveAttrs attrs;
  attrs.epsilon = eps;
  const Var in[] = {x, gain, bias};
  return x.tape().apply(Primitive::layer_norm, in, attrs);
}

Var gelu(const Var& x) { return unary(Primitive::gelu, x); }
Var silu(const Var& x) { return unary(Primitive::silu, x); }

Var scale(const Var& x, double factor) {
  PrimitiveAttrs attrs;
  attrs.factor = factor;
  return unary(Primitive::scale, x, attrs);
}

Var transpose(const Var& x) { return unary(Primitive::transpose, x); }
Var add_row(const Var& x, const Var& row) { return binary(Primitive::add_row, x, row); }
Var mul_row(const Var& x, const Var& row) { return binary(Primitive::mul_row, x, row); }

Var gather_rows(const Var& table, std::vector<std::size_t> indices) {
  PrimitiveAttrs attrs;
  attrs.indices = std::move(indices);
  return unary(Primitive::gather_rows, table, attrs);
}

}  // namespace ops

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw ContractError("grad_check step must lie in [1e-6, 1e-3]");

  auto eval = [&f](const Tensor& at) {
    Tape tape;
    const Var in = tape.constant(at);
    return f(tape, in).value().item();
  };

  const double first = eval(x);
  const double second = eval(x);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw OracleError("grad_check: function is not deterministic across identical calls");
  }

  Tape tape;
  const Var in = tape.leaf(x, true);
  const Var loss = f(tape, in);
  const GradientMap grads = tape.backward(loss);
  const Tensor& analytic = grads[in];

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = eval(probe);
    probe[i] = orig - h;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dittryon
