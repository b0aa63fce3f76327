#include "eloss/tensor.hpp"

#include "eloss/errors.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace eloss {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " +
                                     shape_string(shape_));
  }
  if (shape_size(shape_) != static_cast<std::size_t>(data_.size())) {
    throw DimensionError("shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) +
                         " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double v) {
  Eigen::VectorXd d(1);
  d[0] = v;
  return Tensor({}, std::move(d));
}

Tensor Tensor::zeros(Shape shape) {
  auto n = Eigen::Index(shape_size(shape));
  return Tensor(std::move(shape), Eigen::VectorXd::Zero(n));
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m) {
  Eigen::VectorXd d(m.size());
  Eigen::Map<RowMatrix>(d.data(), m.rows(), m.cols()) = m;
  return Tensor({std::size_t(m.rows()), std::size_t(m.cols())}, std::move(d));
}

Tensor Tensor::from_vector(std::span<const double> values) {
  Eigen::VectorXd d =
      Eigen::Map<const Eigen::VectorXd>(values.data(), Eigen::Index(values.size()));
  return Tensor({values.size()}, std::move(d));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape_));
  }
  return data_[0];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (rank() == 1) return {data_.data(), 1, Eigen::Index(shape_[0])};
  if (rank() != 2) {
    throw DimensionError("matrix view needs rank 1 or 2, got " +
                         shape_string(shape_));
  }
  return {data_.data(), Eigen::Index(shape_[0]), Eigen::Index(shape_[1])};
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

// ---------------------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Tensor Var::grad() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->grad(id_);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.data().allFinite()) {
    throw NonFiniteError("leaf tensor contains non-finite values");
  }
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents,
                 Adjoint adjoint, const char* op_name) {
  if (!value.data().allFinite()) {
    throw NonFiniteError(std::string(op_name) +
                         " produced non-finite values (overflow or invalid input)");
  }
  bool needs = false;
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent not on this tape");
    needs = needs || nodes_[p].requires_grad;
  }
  if (!needs) adjoint = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(adjoint),
                        needs, {}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Eigen::VectorXd& g) {
  auto& node = nodes_.at(id);
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw ContractError("root is not on this tape");
  const auto& rv = nodes_.at(root.id()).value;
  if (rv.size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        shape_string(rv.shape()));
  }
  if (backward_done_) {
    throw ContractError("backward() called twice without zero_grad()");
  }
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;

  accumulate(root.id(), Eigen::VectorXd::Ones(1));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.adjoint || node.grad.size() == 0) continue;
    // Copy: the adjoint may accumulate into this deque while reading it.
    const Eigen::VectorXd g = node.grad;
    node.adjoint(*this, g);
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad.resize(0);
  backward_done_ = false;
}

Tensor Tape::grad(std::size_t id) const {
  const auto& node = nodes_.at(id);
  if (!node.requires_grad) {
    throw ContractError("gradient requested for a node without requires_grad");
  }
  if (node.grad.size() == 0) return Tensor::zeros(node.value.shape());
  return Tensor(node.value.shape(), node.grad);
}

// ---------------------------------------------------------------------------

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw ContractError("operands live on different tapes");
  }
  return *a.tape();
}

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("use of an unbound Var");
  return *a.tape();
}

void check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || a.is_scalar() || b.is_scalar()) return;
  throw DimensionError(std::string(op) + ": shape mismatch " +
                       shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
}

Eigen::VectorXd expand(const Tensor& t, Eigen::Index n) {
  if (t.size() == std::size_t(n)) return t.data();
  return Eigen::VectorXd::Constant(n, t[0]);
}

// Sums a full-size gradient back down to whatever shape the operand had.
Eigen::VectorXd fold(const Eigen::VectorXd& g, const Tensor& operand) {
  if (operand.size() == std::size_t(g.size())) return g;
  return Eigen::VectorXd::Constant(1, g.sum());
}

const Shape& result_shape(const Tensor& a, const Tensor& b) {
  return a.is_scalar() ? b.shape() : a.shape();
}

template <typename Fn>
Var unary(const Var& a, const char* name, Fn&& forward,
          Tape::Adjoint adjoint) {
  auto& tape = tape_of(a);
  const auto& x = a.value();
  Eigen::VectorXd y = forward(x.data());
  return tape.record(Tensor(x.shape(), std::move(y)), {a.id()},
                     std::move(adjoint), name);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(av.shape()) +
                         " by " + shape_string(bv.shape()));
  }
  RowMatrix c = av.matrix() * bv.matrix();
  const auto ai = a.id(), bi = b.id();
  return tape.record(
      Tensor::from_matrix(c), {ai, bi},
      [ai, bi](Tape& t, const Eigen::VectorXd& g) {
        const auto& A = t.value(ai);
        const auto& B = t.value(bi);
        Eigen::Map<const RowMatrix> G(g.data(), Eigen::Index(A.extent(0)),
                                      Eigen::Index(B.extent(1)));
        if (t.requires_grad(ai)) {
          RowMatrix ga = G * B.matrix().transpose();
          t.accumulate(ai, Eigen::Map<const Eigen::VectorXd>(ga.data(), ga.size()));
        }
        if (t.requires_grad(bi)) {
          RowMatrix gb = A.matrix().transpose() * G;
          t.accumulate(bi, Eigen::Map<const Eigen::VectorXd>(gb.data(), gb.size()));
        }
      },
      "matmul");
}

Var add(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  check_binary(av, bv, "add");
  const Shape& s = result_shape(av, bv);
  const auto n = Eigen::Index(shape_size(s));
  Eigen::VectorXd y = expand(av, n) + expand(bv, n);
  const auto ai = a.id(), bi = b.id();
  return tape.record(
      Tensor(s, std::move(y)), {ai, bi},
      [ai, bi](Tape& t, const Eigen::VectorXd& g) {
        t.accumulate(ai, fold(g, t.value(ai)));
        t.accumulate(bi, fold(g, t.value(bi)));
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  check_binary(av, bv, "sub");
  const Shape& s = result_shape(av, bv);
  const auto n = Eigen::Index(shape_size(s));
  Eigen::VectorXd y = expand(av, n) - expand(bv, n);
  const auto ai = a.id(), bi = b.id();
  return tape.record(
      Tensor(s, std::move(y)), {ai, bi},
      [ai, bi](Tape& t, const Eigen::VectorXd& g) {
        t.accumulate(ai, fold(g, t.value(ai)));
        t.accumulate(bi, fold(-g, t.value(bi)));
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  check_binary(av, bv, "mul");
  const Shape& s = result_shape(av, bv);
  const auto n = Eigen::Index(shape_size(s));
  Eigen::VectorXd y = expand(av, n).cwiseProduct(expand(bv, n));
  const auto ai = a.id(), bi = b.id();
  return tape.record(
      Tensor(s, std::move(y)), {ai, bi},
      [ai, bi, n](Tape& t, const Eigen::VectorXd& g) {
        const auto& A = t.value(ai);
        const auto& B = t.value(bi);
        if (t.requires_grad(ai)) {
          t.accumulate(ai, fold(g.cwiseProduct(expand(B, n)), A));
        }
        if (t.requires_grad(bi)) {
          t.accumulate(bi, fold(g.cwiseProduct(expand(A, n)), B));
        }
      },
      "mul");
}

Var add_bias(const Var& m, const Var& bias) {
  auto& tape = same_tape(m, bias);
  const auto& mv = m.value();
  const auto& bv = bias.value();
  if (mv.rank() != 2 || bv.size() != mv.extent(1) || bv.rank() > 2 ||
      (bv.rank() == 2 && bv.extent(0) != 1)) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) +
                         " does not fit rows of " + shape_string(mv.shape()));
  }
  RowMatrix y = mv.matrix();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), y.cols());
  const auto mi = m.id(), bi = bias.id();
  const auto rows = y.rows(), cols = y.cols();
  return tape.record(
      Tensor::from_matrix(y), {mi, bi},
      [mi, bi, rows, cols](Tape& t, const Eigen::VectorXd& g) {
        t.accumulate(mi, g);
        if (t.requires_grad(bi)) {
          Eigen::Map<const RowMatrix> G(g.data(), rows, cols);
          Eigen::VectorXd gb = G.colwise().sum().transpose();
          t.accumulate(bi, gb);
        }
      },
      "add_bias");
}

Var scale(const Var& a, double factor) {
  return unary(
      a, "scale", [factor](const Eigen::VectorXd& x) -> Eigen::VectorXd { return factor * x; },
      [ai = a.id(), factor](Tape& t, const Eigen::VectorXd& g) {
        t.accumulate(ai, factor * g);
      });
}

Var tanh(const Var& a) {
  const auto ai = a.id();
  const auto out_id = tape_of(a).size();
  return unary(
      a, "tanh",
      [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().tanh().matrix(); },
      [ai, out_id](Tape& t, const Eigen::VectorXd& g) {
        const auto& y = t.value(out_id).data();
        t.accumulate(ai, (g.array() * (1.0 - y.array().square())).matrix());
      });
}

Var relu(const Var& a) {
  const auto ai = a.id();
  return unary(
      a, "relu",
      [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseMax(0.0); },
      [ai](Tape& t, const Eigen::VectorXd& g) {
        const auto& x = t.value(ai).data();
        // Subgradient at exactly 0 is taken as 0.
        t.accumulate(ai, (x.array() > 0.0).select(g.array(), 0.0).matrix());
      });
}

Var log(const Var& a) {
  const auto& x = a.value().data();
  if ((x.array() <= 0.0).any()) {
    throw DomainError("log of a non-positive value");
  }
  const auto ai = a.id();
  return unary(
      a, "log",
      [](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v.array().log().matrix(); },
      [ai](Tape& t, const Eigen::VectorXd& g) {
        t.accumulate(ai, (g.array() / t.value(ai).data().array()).matrix());
      });
}

Var square(const Var& a) {
  const auto ai = a.id();
  return unary(
      a, "square",
      [](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v.array().square().matrix(); },
      [ai](Tape& t, const Eigen::VectorXd& g) {
        t.accumulate(ai, (2.0 * g.array() * t.value(ai).data().array()).matrix());
      });
}

Var reduce(Reduction op, const Var& a, std::optional<std::size_t> axis) {
  auto& tape = tape_of(a);
  const auto& x = a.value();
  std::size_t outer = 1, len = x.size(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= x.rank()) {
      throw DomainError("reduce: axis " + std::to_string(*axis) +
                        " invalid for shape " + shape_string(x.shape()));
    }
    for (std::size_t i = 0; i < *axis; ++i) outer *= x.extent(i);
    len = x.extent(*axis);
    for (std::size_t i = *axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
    out_shape = x.shape();
    out_shape.erase(out_shape.begin() + std::ptrdiff_t(*axis));
  }
  if (len == 0) throw DomainError("reduce over an empty axis");

  const auto& xd = x.data();
  auto at = [&](std::size_t o, std::size_t j, std::size_t i) {
    return xd[Eigen::Index((o * len + j) * inner + i)];
  };
  Eigen::VectorXd y(Eigen::Index(outer * inner));
  Eigen::VectorXd means(Eigen::Index(outer * inner));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += at(o, j, i);
      const double m = s / double(len);
      double r = s;
      if (op == Reduction::mean) r = m;
      if (op == Reduction::var_population) {
        double ss = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          const double dlt = at(o, j, i) - m;
          ss += dlt * dlt;
        }
        r = ss / double(len);
      }
      y[Eigen::Index(o * inner + i)] = r;
      means[Eigen::Index(o * inner + i)] = m;
    }
  }

  const auto ai = a.id();
  const char* name = op == Reduction::sum    ? "sum"
                     : op == Reduction::mean ? "mean"
                                             : "var_population";
  return tape.record(
      Tensor(std::move(out_shape), std::move(y)), {ai},
      [ai, op, outer, len, inner, means = std::move(means)](
          Tape& t, const Eigen::VectorXd& g) {
        const auto& xd = t.value(ai).data();
        Eigen::VectorXd gx(xd.size());
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            const auto oi = Eigen::Index(o * inner + i);
            for (std::size_t j = 0; j < len; ++j) {
              const auto k = Eigen::Index((o * len + j) * inner + i);
              switch (op) {
                case Reduction::sum: gx[k] = g[oi]; break;
                case Reduction::mean: gx[k] = g[oi] / double(len); break;
                case Reduction::var_population:
                  gx[k] = g[oi] * 2.0 * (xd[k] - means[oi]) / double(len);
                  break;
              }
            }
          }
        }
        t.accumulate(ai, gx);
      },
      name);
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw DomainError("stack of zero scalars");
  Tape& tape = tape_of(scalars.front());
  Eigen::VectorXd y(Eigen::Index(scalars.size()));
  std::vector<std::size_t> ids;
  ids.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].tape() != &tape) {
      throw ContractError("stack: operands live on different tapes");
    }
    y[Eigen::Index(i)] = scalars[i].value().item();
    ids.push_back(scalars[i].id());
  }
  return tape.record(
      Tensor({scalars.size()}, std::move(y)), ids,
      [ids](Tape& t, const Eigen::VectorXd& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          t.accumulate(ids[i], Eigen::VectorXd::Constant(1, g[Eigen::Index(i)]));
        }
      },
      "stack");
}

Var slice(const Var& v, std::size_t begin, std::size_t end) {
  auto& tape = tape_of(v);
  const auto& x = v.value();
  if (x.rank() != 1 || begin >= end || end > x.size()) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for shape " +
                         shape_string(x.shape()));
  }
  const auto len = Eigen::Index(end - begin);
  Eigen::VectorXd y = x.data().segment(Eigen::Index(begin), len);
  const auto vi = v.id();
  const auto total = Eigen::Index(x.size());
  return tape.record(
      Tensor({end - begin}, std::move(y)), {vi},
      [vi, begin, len, total](Tape& t, const Eigen::VectorXd& g) {
        Eigen::VectorXd gx = Eigen::VectorXd::Zero(total);
        gx.segment(Eigen::Index(begin), len) = g;
        t.accumulate(vi, gx);
      },
      "slice");
}

RowMatrix softmax_rows(const Eigen::Ref<const RowMatrix>& logits) {
  RowMatrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double m = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  auto& tape = tape_of(logits);
  const auto& z = logits.value();
  if (z.rank() != 2 || z.extent(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " +
                         shape_string(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const auto rows = Eigen::Index(z.extent(0));
  const auto classes = Eigen::Index(z.extent(1));
  RowMatrix p = softmax_rows(z.matrix());
  double loss = 0.0;
  std::vector<int> y(labels.begin(), labels.end());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int c = y[std::size_t(r)];
    if (c < 0 || c >= classes) {
      throw DomainError("label " + std::to_string(c) + " outside [0, " +
                        std::to_string(classes) + ")");
    }
    const double m = z.matrix().row(r).maxCoeff();
    const double lse =
        m + std::log((z.matrix().row(r).array() - m).exp().sum());
    loss += lse - z.matrix()(r, c);
  }
  loss /= double(rows);
  const auto zi = logits.id();
  return tape.record(
      Tensor::scalar(loss), {zi},
      [zi, p = std::move(p), y = std::move(y)](Tape& t,
                                               const Eigen::VectorXd& g) {
        RowMatrix gz = p;
        for (Eigen::Index r = 0; r < gz.rows(); ++r) gz(r, y[std::size_t(r)]) -= 1.0;
        gz *= g[0] / double(gz.rows());
        t.accumulate(zi, Eigen::Map<const Eigen::VectorXd>(gz.data(), gz.size()));
      },
      "softmax_cross_entropy");
}

}  // namespace eloss
