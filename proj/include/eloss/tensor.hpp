#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eloss {

using Shape = std::vector<std::size_t>;
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Immutable dense array of doubles in row-major order. A rank-0 tensor is a
/// scalar holding a single value.
class Tensor {
 public:
  Tensor() : data_(Eigen::VectorXd::Zero(1)) {}
  Tensor(Shape shape, Eigen::VectorXd data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m);
  static Tensor from_vector(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(data_.size());
  }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool is_scalar() const noexcept { return shape_.empty(); }

  const Eigen::VectorXd& data() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[Eigen::Index(i)]; }
  double item() const;

  /// Rank-2 view; a rank-1 tensor is seen as a single row.
  Eigen::Map<const RowMatrix> matrix() const;

  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  Eigen::VectorXd data_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient accumulated by Tape::backward, same shape as value().
  Tensor grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
/// parents precede it and backward() is a single reverse sweep.
///
/// One tape belongs to one thread for the duration of a forward/backward
/// pass. Tapes are pinned in memory because Vars point back at them.
class Tape {
 public:
  /// Adjoint rule: receives the gradient w.r.t. the node output and
  /// accumulates into parents through Tape::accumulate.
  using Adjoint = std::function<void(Tape&, const Eigen::VectorXd&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op result. `adjoint` is dropped when no parent needs grads.
  Var record(Tensor value, std::vector<std::size_t> parents, Adjoint adjoint,
             const char* op_name);

  void backward(const Var& root);
  /// Clears accumulated gradients so backward() may run again.
  void zero_grad();

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const {
    return nodes_.at(id).requires_grad;
  }
  Tensor grad(std::size_t id) const;
  void accumulate(std::size_t id, const Eigen::VectorXd& g);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<std::size_t>& parents(std::size_t id) const {
    return nodes_.at(id).parents;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    Adjoint adjoint;
    bool requires_grad = false;
    Eigen::VectorXd grad;  // empty until touched by backward()
  };

  std::deque<Node> nodes_;  // deque keeps value references stable
  bool backward_done_ = false;
};

// Primitive ops. Binary elementwise ops accept equal shapes or a scalar on
// either side; there is no other broadcasting.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Adds a bias row of length c to every row of an r x c matrix.
Var add_bias(const Var& m, const Var& bias);
Var scale(const Var& a, double factor);

Var tanh(const Var& a);
Var relu(const Var& a);
Var log(const Var& a);
Var square(const Var& a);

enum class Reduction { sum, mean, var_population };

/// Reduces along `axis`, or over every element when axis is empty (giving a
/// scalar). var_population divides by the reduced extent N, not N - 1.
Var reduce(Reduction op, const Var& a, std::optional<std::size_t> axis = {});
inline Var sum(const Var& a, std::optional<std::size_t> axis = {}) {
  return reduce(Reduction::sum, a, axis);
}
inline Var mean(const Var& a, std::optional<std::size_t> axis = {}) {
  return reduce(Reduction::mean, a, axis);
}
inline Var var_population(const Var& a, std::optional<std::size_t> axis = {}) {
  return reduce(Reduction::var_population, a, axis);
}

/// Packs scalars into a rank-1 tensor.
Var stack(std::span<const Var> scalars);
/// Elements [begin, end) of a rank-1 tensor.
Var slice(const Var& v, std::size_t begin, std::size_t end);

/// Mean cross-entropy of row-wise softmax(logits) against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Row-wise softmax, no tape involvement.
RowMatrix softmax_rows(const Eigen::Ref<const RowMatrix>& logits);

}  // namespace eloss
