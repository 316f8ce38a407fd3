// SPDX-License-Identifier: Apache-2.0
#include "tagf/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "tagf/error.hpp"

namespace tagf {

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t resolve_axis(int axis, std::size_t rank, const char* op) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= rank) {
    std::ostringstream os;
    os << op << ": axis " << axis << " out of range for rank " << rank;
    throw ShapeError(os.str());
  }
  return static_cast<std::size_t>(axis);
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a,
                                 const Shape& b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << to_string(a) << " and "
     << to_string(b);
  throw ShapeError(os.str());
}

void require_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    std::ostringstream os;
    os << op_name(kind) << ": expected " << want << " operand(s), got " << got;
    throw ContractError(os.str());
  }
}

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

// Source flat index for every output element of a broadcast.
std::vector<std::size_t> broadcast_map(const Shape& src, const Shape& dst) {
  if (src.size() > dst.size()) shape_mismatch("broadcast", src, dst);
  Shape padded(dst.size() - src.size(), 1);
  padded.insert(padded.end(), src.begin(), src.end());
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (padded[i] != 1 && padded[i] != dst[i]) {
      shape_mismatch("broadcast", src, dst);
    }
  }
  const Shape src_strides = strides_of(padded);
  const Shape dst_strides = strides_of(dst);
  const std::size_t total = numel(dst);
  std::vector<std::size_t> map(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    std::size_t src_index = 0;
    for (std::size_t d = 0; d < dst.size(); ++d) {
      const std::size_t coord = rem / dst_strides[d];
      rem %= dst_strides[d];
      if (padded[d] != 1) src_index += coord * src_strides[d];
    }
    map[flat] = src_index;
  }
  return map;
}

std::atomic<int> g_corrupted{-1};

constexpr std::array<OpKind, 18> kPrimitives = {
    OpKind::MatMul,    OpKind::Add,     OpKind::Sub,    OpKind::Mul,
    OpKind::ScalarMul, OpKind::Concat,  OpKind::Slice,  OpKind::Transpose,
    OpKind::Reshape,   OpKind::Sum,     OpKind::Mean,   OpKind::Tanh,
    OpKind::Sigmoid,   OpKind::Exp,     OpKind::Softmax, OpKind::Sqrt,
    OpKind::ReciprocalEps, OpKind::Broadcast,
};

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::ReciprocalEps: return "reciprocal_eps";
    case OpKind::Broadcast: return "broadcast";
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(const std::string& name) {
  for (OpKind k : kPrimitives) {
    if (name == op_name(k)) return k;
  }
  return std::nullopt;
}

std::span<const OpKind> all_primitives() { return kPrimitives; }

// ---------------------------------------------------------------------------
// Tensor

Tape& Tensor::tape() const {
  if (!tape_) throw ContractError("tensor handle is not bound to a tape");
  return *tape_;
}

const Shape& Tensor::shape() const { return tape().node(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw ShapeError("dim(): axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return tagf::numel(shape()); }

bool Tensor::requires_grad() const {
  return tape().node(*this).requires_grad;
}

std::span<const double> Tensor::values() const {
  return tape().node(*this).value;
}

std::span<const double> Tensor::grad() const {
  return tape().node(*this).grad;
}

double Tensor::item() const {
  const auto v = values();
  if (v.size() != 1) {
    throw ShapeError("item(): tensor of shape " + to_string(shape()) +
                     " is not a scalar");
  }
  return v[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

double Tensor::at(std::size_t row, std::size_t col) const {
  const Shape& s = shape();
  if (s.size() != 2) throw ShapeError("at(row, col) needs a matrix");
  return values()[row * s[1] + col];
}

std::vector<double> Tensor::to_vector() const {
  const auto v = values();
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(const Tensor& t) const {
  check_owned(t);
  return nodes_[t.id_];
}

void Tape::check_owned(const Tensor& t) const {
  if (t.tape_ != this || t.id_ >= nodes_.size()) {
    throw ContractError("tensor does not belong to this tape");
  }
}

Tensor Tape::push(Node node) {
  for (double v : node.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("numeric overflow: ") +
                         op_name(node.kind) + " produced a non-finite value");
    }
  }
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size() || shape.empty()) {
    throw ShapeError("constant: shape " + to_string(shape) +
                     " does not match " + std::to_string(values.size()) +
                     " values");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  return push(std::move(n));
}

Tensor Tape::constant(Shape shape, double fill) {
  const std::size_t count = numel(shape);
  return constant(std::move(shape), std::vector<double>(count, fill));
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  nodes_[t.id_].requires_grad = true;
  return t;
}

Tensor Tape::parameter(const std::string& name, Shape shape,
                       std::vector<double> values) {
  if (param_index_.contains(name)) {
    throw ContractError("parameter '" + name + "' registered twice");
  }
  Tensor t = variable(std::move(shape), std::move(values));
  param_index_.emplace(name, params_.size());
  params_.emplace_back(name, t.id_);
  return t;
}

Tensor Tape::parameter(const ParameterStore& store, const std::string& name) {
  const auto& e = store.at(name);
  return parameter(name, e.shape, e.values);
}

void Tape::reset() {
  nodes_.clear();
  params_.clear();
  param_index_.clear();
}

Tensor Tape::apply(OpKind kind, std::span<const Tensor> operands,
                   const OpAttrs& attrs) {
  for (const auto& t : operands) check_owned(t);
  Node out;
  out.kind = kind;
  out.attrs = attrs;
  out.inputs.reserve(operands.size());
  for (const auto& t : operands) {
    out.inputs.push_back(t.id_);
    out.requires_grad = out.requires_grad || nodes_[t.id_].requires_grad;
  }
  auto in = [&](std::size_t i) -> const Node& {
    return nodes_[operands[i].id_];
  };

  switch (kind) {
    case OpKind::Leaf:
      throw ContractError("apply: leaf is not an operation");

    case OpKind::MatMul: {
      require_arity(kind, operands.size(), 2);
      const Node& a = in(0);
      const Node& b = in(1);
      if (a.shape.size() != 2 || b.shape.size() != 2 ||
          a.shape[1] != b.shape[0]) {
        shape_mismatch("matmul", a.shape, b.shape);
      }
      const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
      out.shape = {m, n};
      out.value.assign(m * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        double* row = out.value.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a.value[i * k + p];
          if (av == 0.0) continue;
          const double* brow = b.value.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
      }
      break;
    }

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      require_arity(kind, operands.size(), 2);
      const Node& a = in(0);
      const Node& b = in(1);
      if (a.shape != b.shape) shape_mismatch(op_name(kind), a.shape, b.shape);
      out.shape = a.shape;
      out.value.resize(a.value.size());
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        out.value[i] = kind == OpKind::Add   ? a.value[i] + b.value[i]
                       : kind == OpKind::Sub ? a.value[i] - b.value[i]
                                             : a.value[i] * b.value[i];
      }
      break;
    }

    case OpKind::ScalarMul: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      out.shape = a.shape;
      out.value.resize(a.value.size());
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        out.value[i] = attrs.scalar * a.value[i];
      }
      break;
    }

    case OpKind::Concat: {
      if (operands.empty()) throw ContractError("concat: no operands");
      const Shape& first = in(0).shape;
      const std::size_t axis = resolve_axis(attrs.axis, first.size(), "concat");
      Shape shape = first;
      shape[axis] = 0;
      for (std::size_t p = 0; p < operands.size(); ++p) {
        const Shape& s = in(p).shape;
        if (s.size() != first.size()) shape_mismatch("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d) {
          if (d != axis && s[d] != first[d]) shape_mismatch("concat", first, s);
        }
        shape[axis] += s[axis];
      }
      const AxisSplit os = split_at(shape, axis);
      out.value.resize(numel(shape));
      std::size_t offset = 0;
      for (std::size_t p = 0; p < operands.size(); ++p) {
        const Node& part = in(p);
        const AxisSplit ps = split_at(part.shape, axis);
        const std::size_t block = ps.n * ps.inner;
        for (std::size_t o = 0; o < ps.outer; ++o) {
          std::copy_n(part.value.begin() + o * block, block,
                      out.value.begin() + o * os.n * os.inner + offset);
        }
        offset += block;
      }
      out.shape = std::move(shape);
      break;
    }

    case OpKind::Slice: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      const std::size_t axis = resolve_axis(attrs.axis, a.shape.size(), "slice");
      if (attrs.begin >= attrs.end || attrs.end > a.shape[axis]) {
        std::ostringstream os;
        os << "slice: range [" << attrs.begin << ", " << attrs.end
           << ") invalid for axis extent " << a.shape[axis];
        throw ShapeError(os.str());
      }
      const AxisSplit s = split_at(a.shape, axis);
      out.shape = a.shape;
      out.shape[axis] = attrs.end - attrs.begin;
      const std::size_t block = (attrs.end - attrs.begin) * s.inner;
      out.value.resize(s.outer * block);
      for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(a.value.begin() + o * s.n * s.inner + attrs.begin * s.inner,
                    block, out.value.begin() + o * block);
      }
      break;
    }

    case OpKind::Transpose: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      if (a.shape.size() != 2) {
        throw ShapeError("transpose: expects a matrix, got " +
                         to_string(a.shape));
      }
      const std::size_t r = a.shape[0], c = a.shape[1];
      out.shape = {c, r};
      out.value.resize(r * c);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          out.value[j * r + i] = a.value[i * c + j];
        }
      }
      break;
    }

    case OpKind::Reshape: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      if (attrs.shape.empty() || numel(attrs.shape) != a.value.size()) {
        shape_mismatch("reshape", a.shape, attrs.shape);
      }
      out.shape = attrs.shape;
      out.value = a.value;
      break;
    }

    case OpKind::Sum:
    case OpKind::Mean: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      if (attrs.axis == -1) {
        double acc = 0.0;
        for (double v : a.value) acc += v;
        if (kind == OpKind::Mean) acc /= static_cast<double>(a.value.size());
        out.shape = {1};
        out.value = {acc};
      } else {
        const std::size_t axis =
            resolve_axis(attrs.axis, a.shape.size(), op_name(kind));
        const AxisSplit s = split_at(a.shape, axis);
        out.shape = a.shape;
        out.shape[axis] = 1;
        out.value.assign(s.outer * s.inner, 0.0);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t j = 0; j < s.n; ++j) {
            for (std::size_t i = 0; i < s.inner; ++i) {
              out.value[o * s.inner + i] +=
                  a.value[(o * s.n + j) * s.inner + i];
            }
          }
        }
        if (kind == OpKind::Mean) {
          for (double& v : out.value) v /= static_cast<double>(s.n);
        }
      }
      break;
    }

    case OpKind::Tanh:
    case OpKind::Sigmoid:
    case OpKind::Exp:
    case OpKind::Sqrt:
    case OpKind::ReciprocalEps: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      out.shape = a.shape;
      out.value.resize(a.value.size());
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        const double x = a.value[i];
        switch (kind) {
          case OpKind::Tanh: out.value[i] = std::tanh(x); break;
          case OpKind::Sigmoid:
            out.value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                    : std::exp(x) / (1.0 + std::exp(x));
            break;
          case OpKind::Exp: out.value[i] = std::exp(x); break;
          case OpKind::Sqrt:
            if (x < 0.0) {
              throw NumericError("numeric overflow: sqrt of negative value");
            }
            out.value[i] = std::sqrt(x);
            break;
          default: out.value[i] = 1.0 / std::max(x, attrs.epsilon); break;
        }
      }
      break;
    }

    case OpKind::Softmax: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      const std::size_t axis =
          resolve_axis(attrs.axis, a.shape.size(), "softmax");
      const bool masked = !attrs.mask.empty();
      if (masked && attrs.mask.size() != a.value.size()) {
        throw ShapeError("softmax: mask size does not match operand " +
                         to_string(a.shape));
      }
      const AxisSplit s = split_at(a.shape, axis);
      out.shape = a.shape;
      out.value.assign(a.value.size(), 0.0);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          auto idx = [&](std::size_t j) { return (o * s.n + j) * s.inner + i; };
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < s.n; ++j) {
            if (masked && !attrs.mask[idx(j)]) continue;
            mx = std::max(mx, a.value[idx(j)]);
          }
          if (mx == -std::numeric_limits<double>::infinity()) continue;
          double z = 0.0;
          for (std::size_t j = 0; j < s.n; ++j) {
            if (masked && !attrs.mask[idx(j)]) continue;
            const double e = std::exp(a.value[idx(j)] - mx);
            out.value[idx(j)] = e;
            z += e;
          }
          for (std::size_t j = 0; j < s.n; ++j) out.value[idx(j)] /= z;
        }
      }
      break;
    }

    case OpKind::Broadcast: {
      require_arity(kind, operands.size(), 1);
      const Node& a = in(0);
      const auto map = broadcast_map(a.shape, attrs.shape);
      out.shape = attrs.shape;
      out.value.resize(map.size());
      for (std::size_t i = 0; i < map.size(); ++i) out.value[i] = a.value[map[i]];
      break;
    }
  }
  return push(std::move(out));
}

GradientMap Tape::backward(const Tensor& loss) {
  check_owned(loss);
  const Node& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        to_string(root.shape));
  }
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      n.grad.assign(n.value.size(), 0.0);
    } else {
      n.grad.clear();
    }
  }
  if (nodes_[loss.id_].requires_grad) {
    nodes_[loss.id_].grad[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.kind == OpKind::Leaf) continue;
      backward_node(n);
    }
  }
  GradientMap grads;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    grads[name] = n.grad.empty() ? std::vector<double>(n.value.size(), 0.0)
                                 : n.grad;
  }
  return grads;
}

void Tape::backward_node(Node& node) {
  std::vector<double> upstream_copy;
  const std::vector<double>* up = &node.grad;
  if (g_corrupted.load() == static_cast<int>(node.kind)) {
    upstream_copy = node.grad;
    for (double& g : upstream_copy) g *= 1.5;
    up = &upstream_copy;
  }
  const std::vector<double>& g = *up;
  auto input = [&](std::size_t i) -> Node& { return nodes_[node.inputs[i]]; };
  auto wants = [&](std::size_t i) { return input(i).requires_grad; };

  switch (node.kind) {
    case OpKind::Leaf: break;

    case OpKind::MatMul: {
      Node& a = input(0);
      Node& b = input(1);
      const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
      if (a.requires_grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              acc += g[i * n + j] * b.value[p * n + j];
            }
            a.grad[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a.value[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
              b.grad[p * n + j] += av * g[i * n + j];
            }
          }
        }
      }
      break;
    }

    case OpKind::Add:
    case OpKind::Sub: {
      const double sign = node.kind == OpKind::Sub ? -1.0 : 1.0;
      if (wants(0)) {
        Node& a = input(0);
        for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
      }
      if (wants(1)) {
        Node& b = input(1);
        for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += sign * g[i];
      }
      break;
    }

    case OpKind::Mul: {
      Node& a = input(0);
      Node& b = input(1);
      if (a.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * b.value[i];
      }
      if (b.requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i] * a.value[i];
      }
      break;
    }

    case OpKind::ScalarMul: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        a.grad[i] += node.attrs.scalar * g[i];
      }
      break;
    }

    case OpKind::Concat: {
      const std::size_t axis = static_cast<std::size_t>(node.attrs.axis);
      const AxisSplit os = split_at(node.shape, axis);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < node.inputs.size(); ++p) {
        Node& part = input(p);
        const AxisSplit ps = split_at(part.shape, axis);
        const std::size_t block = ps.n * ps.inner;
        if (part.requires_grad) {
          for (std::size_t o = 0; o < ps.outer; ++o) {
            const double* src = g.data() + o * os.n * os.inner + offset;
            double* dst = part.grad.data() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset += block;
      }
      break;
    }

    case OpKind::Slice: {
      Node& a = input(0);
      const std::size_t axis = static_cast<std::size_t>(node.attrs.axis);
      const AxisSplit s = split_at(a.shape, axis);
      const std::size_t block = (node.attrs.end - node.attrs.begin) * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        double* dst =
            a.grad.data() + o * s.n * s.inner + node.attrs.begin * s.inner;
        const double* src = g.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
      }
      break;
    }

    case OpKind::Transpose: {
      Node& a = input(0);
      const std::size_t r = a.shape[0], c = a.shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) a.grad[i * c + j] += g[j * r + i];
      }
      break;
    }

    case OpKind::Reshape: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
      break;
    }

    case OpKind::Sum:
    case OpKind::Mean: {
      Node& a = input(0);
      if (node.attrs.axis == -1) {
        const double gi =
            node.kind == OpKind::Mean
                ? g[0] / static_cast<double>(a.value.size())
                : g[0];
        for (double& v : a.grad) v += gi;
      } else {
        const AxisSplit s =
            split_at(a.shape, static_cast<std::size_t>(node.attrs.axis));
        const double factor =
            node.kind == OpKind::Mean ? 1.0 / static_cast<double>(s.n) : 1.0;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t j = 0; j < s.n; ++j) {
            for (std::size_t i = 0; i < s.inner; ++i) {
              a.grad[(o * s.n + j) * s.inner + i] +=
                  factor * g[o * s.inner + i];
            }
          }
        }
      }
      break;
    }

    case OpKind::Tanh: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = node.value[i];
        a.grad[i] += g[i] * (1.0 - y * y);
      }
      break;
    }
    case OpKind::Sigmoid: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = node.value[i];
        a.grad[i] += g[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::Exp: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * node.value[i];
      break;
    }
    case OpKind::Sqrt: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        // d/dx sqrt is unbounded at 0; treat the origin as a stationary point.
        if (node.value[i] > 0.0) a.grad[i] += g[i] * 0.5 / node.value[i];
      }
      break;
    }
    case OpKind::ReciprocalEps: {
      Node& a = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a.value[i] > node.attrs.epsilon) {
          const double y = node.value[i];
          a.grad[i] -= g[i] * y * y;
        }
      }
      break;
    }

    case OpKind::Softmax: {
      Node& a = input(0);
      const AxisSplit s =
          split_at(a.shape, static_cast<std::size_t>(node.attrs.axis));
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          auto idx = [&](std::size_t j) { return (o * s.n + j) * s.inner + i; };
          double dot = 0.0;
          for (std::size_t j = 0; j < s.n; ++j) {
            dot += g[idx(j)] * node.value[idx(j)];
          }
          for (std::size_t j = 0; j < s.n; ++j) {
            a.grad[idx(j)] += node.value[idx(j)] * (g[idx(j)] - dot);
          }
        }
      }
      break;
    }

    case OpKind::Broadcast: {
      Node& a = input(0);
      const auto map = broadcast_map(a.shape, node.shape);
      for (std::size_t i = 0; i < map.size(); ++i) a.grad[map[i]] += g[i];
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Free functions

namespace {
Tensor unary(OpKind kind, const Tensor& a, OpAttrs attrs = {}) {
  const std::array<Tensor, 1> ops{a};
  return a.tape().apply(kind, ops, attrs);
}
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  const std::array<Tensor, 2> ops{a, b};
  return a.tape().apply(kind, ops);
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  return binary(OpKind::MatMul, a, b);
}
Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::Mul, a, b); }

Tensor scale(const Tensor& a, double factor) {
  OpAttrs attrs;
  attrs.scalar = factor;
  return unary(OpKind::ScalarMul, a, attrs);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  OpAttrs attrs;
  attrs.axis = axis;
  return parts.front().tape().apply(OpKind::Concat, parts, attrs);
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.begin = begin;
  attrs.end = end;
  return unary(OpKind::Slice, a, attrs);
}

Tensor transpose(const Tensor& a) { return unary(OpKind::Transpose, a); }

Tensor reshape(const Tensor& a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return unary(OpKind::Reshape, a, attrs);
}

Tensor sum(const Tensor& a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return unary(OpKind::Sum, a, attrs);
}

Tensor mean(const Tensor& a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return unary(OpKind::Mean, a, attrs);
}

Tensor tanh(const Tensor& a) { return unary(OpKind::Tanh, a); }
Tensor sigmoid(const Tensor& a) { return unary(OpKind::Sigmoid, a); }
Tensor exp(const Tensor& a) { return unary(OpKind::Exp, a); }
Tensor sqrt(const Tensor& a) { return unary(OpKind::Sqrt, a); }

Tensor softmax(const Tensor& a, int axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return unary(OpKind::Softmax, a, attrs);
}

Tensor masked_softmax(const Tensor& a, int axis,
                      std::vector<std::uint8_t> keep_mask) {
  OpAttrs attrs;
  attrs.axis = axis;
  attrs.mask = std::move(keep_mask);
  return unary(OpKind::Softmax, a, attrs);
}

Tensor reciprocal_eps(const Tensor& a, double epsilon) {
  OpAttrs attrs;
  attrs.epsilon = epsilon;
  return unary(OpKind::ReciprocalEps, a, attrs);
}

Tensor broadcast_to(const Tensor& a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return unary(OpKind::Broadcast, a, attrs);
}

Tensor add_row(const Tensor& matrix, const Tensor& row) {
  return add(matrix, broadcast_to(row, matrix.shape()));
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(std::string name, Shape shape,
                         std::vector<double> values) {
  if (index_.contains(name)) {
    throw ContractError("duplicate parameter '" + name + "'");
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("parameter '" + name + "': shape " + to_string(shape) +
                     " does not match " + std::to_string(values.size()) +
                     " values");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool ParameterStore::contains(const std::string& name) const {
  return index_.contains(name);
}

const ParameterStore::Entry& ParameterStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

ParameterStore::Entry& ParameterStore::at(const std::string& name) {
  return const_cast<Entry&>(std::as_const(*this).at(name));
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

GradientMap ParameterStore::zeros_like() const {
  GradientMap out;
  for (const auto& e : entries_) out[e.name].assign(e.values.size(), 0.0);
  return out;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.values != b.values) {
      return false;
    }
  }
  return true;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterStore& store)
    : tape_(&tape) {
  for (const auto& e : store.entries()) {
    tensors_.emplace(e.name, tape.parameter(e.name, e.shape, e.values));
  }
}

const Tensor& BoundParameters::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) {
    throw ContractError("parameter '" + name + "' is not bound");
  }
  return it->second;
}

bool BoundParameters::contains(const std::string& name) const {
  return tensors_.contains(name);
}

void accumulate(GradientMap& into, const GradientMap& from, double weight) {
  for (const auto& [name, g] : from) {
    auto& dst = into[name];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    if (dst.size() != g.size()) {
      throw ShapeError("accumulate: gradient size mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += weight * g[i];
  }
}

namespace fault {
void corrupt_backward(std::optional<OpKind> kind) {
  g_corrupted.store(kind ? static_cast<int>(*kind) : -1);
}
std::optional<OpKind> corrupted_backward() {
  const int v = g_corrupted.load();
  if (v < 0) return std::nullopt;
  return static_cast<OpKind>(v);
}
}  // namespace fault

}  // namespace tagf
