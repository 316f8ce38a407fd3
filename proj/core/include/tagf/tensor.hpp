// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors recorded on a reverse-mode differentiation tape.
//
// A Tape owns every node created through it. Tensor is a lightweight handle
// (tape pointer + node index) and stays valid for the lifetime of the tape.
// Nodes are appended in creation order, which is already a topological order,
// so backward() is a single reverse sweep.
//
// Tape reuse: backward() may be called any number of times on the same tape.
// Each call zeroes all gradient buffers first, so results never accumulate
// across calls. reset() drops every node and invalidates all handles.
//
// Only first-order gradients are supported.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tagf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Guard used by ReciprocalEps: y = 1 / max(x, kReciprocalEpsilon).
inline constexpr double kReciprocalEpsilon = 1e-8;

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  ScalarMul,
  Concat,
  Slice,
  Transpose,
  Reshape,
  Sum,
  Mean,
  Tanh,
  Sigmoid,
  Exp,
  Softmax,
  Sqrt,
  ReciprocalEps,
  Broadcast,
};

const char* op_name(OpKind kind);
std::optional<OpKind> op_from_name(const std::string& name);

/// Every differentiable primitive (everything except Leaf).
std::span<const OpKind> all_primitives();

/// Attributes consumed by individual primitives; unused fields are ignored.
struct OpAttrs {
  /// Concat / Slice / Softmax axis; Sum / Mean axis, where -1 reduces all.
  int axis = -1;
  /// ScalarMul factor.
  double scalar = 1.0;
  /// Slice range [begin, end) along `axis`.
  std::size_t begin = 0;
  std::size_t end = 0;
  /// Reshape / Broadcast target shape.
  Shape shape;
  /// Optional Softmax keep-mask with the operand's shape (0 = excluded entry,
  /// equivalent to a -inf logit). Rows that are fully excluded produce zeros.
  std::vector<std::uint8_t> mask;
  /// ReciprocalEps guard.
  double epsilon = kReciprocalEpsilon;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  [[nodiscard]] Tape& tape() const;
  [[nodiscard]] std::size_t id() const { return id_; }

  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t numel() const;
  [[nodiscard]] bool requires_grad() const;

  [[nodiscard]] std::span<const double> values() const;
  /// Empty until backward() ran on a loss that depends on this tensor.
  [[nodiscard]] std::span<const double> grad() const;

  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::size_t i) const;
  [[nodiscard]] double at(std::size_t row, std::size_t col) const;

  std::vector<double> to_vector() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients keyed by parameter name, each buffer matching that parameter's
/// row-major layout.
using GradientMap = std::map<std::string, std::vector<double>>;

class ParameterStore;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant(Shape shape, double fill);
  Tensor variable(Shape shape, std::vector<double> values);

  /// Registers a trainable leaf under `name`; backward() reports its gradient.
  Tensor parameter(const std::string& name, Shape shape,
                   std::vector<double> values);
  /// Registers the named entry of `store`.
  Tensor parameter(const ParameterStore& store, const std::string& name);

  Tensor apply(OpKind kind, std::span<const Tensor> operands,
               const OpAttrs& attrs = {});

  /// Reverse sweep from a scalar `loss`. Every registered parameter gets an
  /// entry; parameters the loss does not depend on receive zeros.
  GradientMap backward(const Tensor& loss);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const std::vector<std::pair<std::string, std::size_t>>&
  parameters() const {
    return params_;
  }

  void reset();

 private:
  friend class Tensor;

  struct Node {
    OpKind kind = OpKind::Leaf;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    OpAttrs attrs;
    bool requires_grad = false;
  };

  Tensor push(Node node);
  const Node& node(const Tensor& t) const;
  void check_owned(const Tensor& t) const;
  void backward_node(Node& node);

  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
  std::unordered_map<std::string, std::size_t> param_index_;
};

// Functional front-ends; each forwards to Tape::apply on the operands' tape.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a, int axis = -1);
Tensor mean(const Tensor& a, int axis = -1);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
Tensor masked_softmax(const Tensor& a, int axis,
                      std::vector<std::uint8_t> keep_mask);
Tensor sqrt(const Tensor& a);
Tensor reciprocal_eps(const Tensor& a, double epsilon = kReciprocalEpsilon);
Tensor broadcast_to(const Tensor& a, Shape shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Row-broadcasting helpers for the common (rows x cols) + (1 x cols) case.
Tensor add_row(const Tensor& matrix, const Tensor& row);

/// Named, ordered collection of trainable buffers. Insertion order is stable
/// and defines checkpoint layout.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };

  void add(std::string name, Shape shape, std::vector<double> values);
  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] const Entry& at(const std::string& name) const;
  Entry& at(const std::string& name);
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::size_t total_values() const;

  GradientMap zeros_like() const;

  bool operator==(const ParameterStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Every entry of a store bound onto one tape.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterStore& store);
  [[nodiscard]] const Tensor& at(const std::string& name) const;
  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::unordered_map<std::string, Tensor> tensors_;
};

void accumulate(GradientMap& into, const GradientMap& from, double weight = 1.0);

namespace fault {
/// Test hook: when set, the backward rule of `kind` is deliberately wrong
/// (input gradient scaled by 1.5). Process-wide.
void corrupt_backward(std::optional<OpKind> kind);
std::optional<OpKind> corrupted_backward();
}  // namespace fault

}  // namespace tagf
