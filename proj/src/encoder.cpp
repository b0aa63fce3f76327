#include "eloss/encoder.hpp"

#include "eloss/errors.hpp"
#include "eloss/rng.hpp"

#include <cmath>

namespace eloss {

void EncoderSpec::validate() const {
  if (blocks < 1) throw ConfigError("encoder needs at least one block");
  if (layers_per_block < 3) {
    throw ConfigError("each block needs N >= 3 layers so it yields >= 2 drops");
  }
  if (widths.size() != std::size_t(blocks)) {
    throw ConfigError("widths has " + std::to_string(widths.size()) + " entries for " +
                      std::to_string(blocks) + " blocks");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("layer widths must be positive");
  }
  if (mask.size() != std::size_t(blocks)) {
    throw ConfigError("mask has " + std::to_string(mask.size()) + " entries for " +
                      std::to_string(blocks) + " blocks");
  }
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (head == HeadKind::classification && num_classes < 2) {
    throw ConfigError("classification head needs >= 2 classes");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
}

std::vector<Tensor> Params::to_tensors() const {
  std::vector<Tensor> out;
  out.reserve(tensor_count());
  auto push = [&](const DenseLayer& l) {
    out.push_back(Tensor::from_matrix(l.weight));
    out.push_back(Tensor({std::size_t(l.bias.size())}, l.bias.transpose()));
  };
  for (const auto& l : layers) push(l);
  push(head);
  return out;
}

namespace {

std::vector<std::pair<int, int>> layer_shapes(const EncoderSpec& spec) {
  std::vector<std::pair<int, int>> shapes;
  int fan_in = spec.input_dim;
  for (int b = 0; b < spec.blocks; ++b) {
    for (int n = 0; n < spec.layers_per_block; ++n) {
      shapes.emplace_back(fan_in, spec.widths[std::size_t(b)]);
      fan_in = spec.widths[std::size_t(b)];
    }
  }
  shapes.emplace_back(fan_in, spec.output_dim());
  return shapes;
}

}  // namespace

Params Params::from_tensors(const EncoderSpec& spec, std::span<const Tensor> tensors) {
  spec.validate();
  const auto shapes = layer_shapes(spec);
  if (tensors.size() != 2 * shapes.size()) {
    throw DimensionError("expected " + std::to_string(2 * shapes.size()) +
                         " parameter tensors, got " + std::to_string(tensors.size()));
  }
  Params p;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& w = tensors[2 * i];
    const auto& b = tensors[2 * i + 1];
    const auto [fi, fo] = shapes[i];
    if (w.shape() != Shape{std::size_t(fi), std::size_t(fo)} || b.size() != std::size_t(fo)) {
      throw DimensionError("parameter tensor " + std::to_string(2 * i) + " has shape " +
                           shape_string(w.shape()) + ", expected (" + std::to_string(fi) +
                           ", " + std::to_string(fo) + ")");
    }
    DenseLayer l{w.matrix(), b.data().transpose()};
    if (i + 1 == shapes.size()) {
      p.head = std::move(l);
    } else {
      p.layers.push_back(std::move(l));
    }
  }
  return p;
}

Params init_params(const EncoderSpec& spec) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, "init");
  Params p;
  const auto shapes = layer_shapes(spec);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto [fi, fo] = shapes[i];
    const double a = std::sqrt(6.0 / double(fi + fo));
    DenseLayer l{RowMatrix(fi, fo), Eigen::RowVectorXd::Zero(fo)};
    for (int r = 0; r < fi; ++r) {
      for (int c = 0; c < fo; ++c) l.weight(r, c) = a * (2.0 * rng.uniform01() - 1.0);
    }
    if (i + 1 == shapes.size()) {
      p.head = std::move(l);
    } else {
      p.layers.push_back(std::move(l));
    }
  }
  return p;
}

void SyntheticTask::validate() const {
  if (informative_dims < 1 || nuisance_dims < 0) {
    throw ConfigError("task needs >= 1 informative and >= 0 nuisance dims");
  }
  if (informative_dims + nuisance_dims != input_dim) {
    throw ConfigError("informative_dims + nuisance_dims must equal input_dim");
  }
  if (train_rows < 2 || validation_rows < 2) throw ConfigError("task needs >= 2 rows per split");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
}

namespace {

Dataset draw(const SyntheticTask& task, std::size_t rows, Rng& rng) {
  Dataset d{RowMatrix(Eigen::Index(rows), task.input_dim), std::vector<int>(rows),
            Eigen::VectorXd(Eigen::Index(rows))};
  for (std::size_t r = 0; r < rows; ++r) {
    const auto i = Eigen::Index(r);
    for (int j = 0; j < task.input_dim; ++j) d.x(i, j) = rng.normal();
    double s = d.x.row(i).head(task.informative_dims).sum();
    if (task.noise_std > 0.0) s += task.noise_std * rng.normal();
    d.targets[i] = s;
    d.labels[r] = s > 0.0 ? 1 : 0;
  }
  return d;
}

}  // namespace

TaskData generate_task(const SyntheticTask& task) {
  task.validate();
  Rng rng = Rng::stream(task.seed, "task");
  TaskData out;
  out.train = draw(task, std::size_t(task.train_rows), rng);
  out.validation = draw(task, std::size_t(task.validation_rows), rng);
  return out;
}

Dataset sample_task(const SyntheticTask& task, std::size_t rows, std::uint64_t seed) {
  task.validate();
  Rng rng = Rng::stream(seed, "task-sample");
  return draw(task, rows, rng);
}

Dataset gather(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out{RowMatrix(Eigen::Index(rows.size()), data.x.cols()),
              std::vector<int>(rows.size()), Eigen::VectorXd(Eigen::Index(rows.size()))};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r >= data.rows()) throw DimensionError("gather row out of range");
    out.x.row(Eigen::Index(i)) = data.x.row(Eigen::Index(r));
    if (!data.labels.empty()) out.labels[i] = data.labels[r];
    if (data.targets.size()) out.targets[Eigen::Index(i)] = data.targets[Eigen::Index(r)];
  }
  return out;
}

namespace {

void check_batch(const EncoderSpec& spec, Eigen::Index cols) {
  if (cols != spec.input_dim) {
    throw DimensionError("batch width " + std::to_string(cols) +
                         " does not match input_dim " + std::to_string(spec.input_dim));
  }
}

Var activate(const EncoderSpec& spec, const Var& z) {
  return spec.activation == Activation::tanh ? tanh(z) : relu(z);
}

}  // namespace

TapedForward forward_with_capture(const EncoderSpec& spec, std::span<const Var> leaves,
                                  const Var& batch) {
  spec.validate();
  const auto& bv = batch.value();
  if (bv.rank() != 2) throw DimensionError("batch must be a matrix");
  check_batch(spec, Eigen::Index(bv.extent(1)));
  if (leaves.size() != 2 * (spec.layer_count() + 1)) {
    throw DimensionError("parameter leaf count does not match the encoder");
  }
  TapedForward out;
  out.captures.resize(std::size_t(spec.blocks));
  Var h = batch;
  std::size_t li = 0;
  for (int b = 0; b < spec.blocks; ++b) {
    for (int n = 0; n < spec.layers_per_block; ++n, ++li) {
      h = activate(spec, add_bias(matmul(h, leaves[2 * li]), leaves[2 * li + 1]));
      out.captures[std::size_t(b)].push_back(h);
    }
  }
  out.output = add_bias(matmul(h, leaves[2 * li]), leaves[2 * li + 1]);
  return out;
}

Forward forward(const EncoderSpec& spec, const Params& params,
                const Eigen::Ref<const RowMatrix>& batch) {
  spec.validate();
  check_batch(spec, batch.cols());
  Forward out;
  out.captures.resize(std::size_t(spec.blocks));
  RowMatrix h = batch;
  std::size_t li = 0;
  for (int b = 0; b < spec.blocks; ++b) {
    for (int n = 0; n < spec.layers_per_block; ++n, ++li) {
      const auto& l = params.layers.at(li);
      RowMatrix z = h * l.weight;
      z.rowwise() += l.bias;
      h = spec.activation == Activation::tanh ? RowMatrix(z.array().tanh())
                                              : RowMatrix(z.cwiseMax(0.0));
      out.captures[std::size_t(b)].push_back(h);
    }
  }
  out.output = h * params.head.weight;
  out.output.rowwise() += params.head.bias;
  return out;
}

double confidence(const EncoderSpec& spec, const Eigen::Ref<const RowMatrix>& output) {
  if (spec.head != HeadKind::classification) {
    throw ContractError("confidence needs a classification head");
  }
  if (output.rows() == 0) throw ContractError("confidence of an empty batch");
  const RowMatrix p = softmax_rows(output);
  return p.rowwise().maxCoeff().mean();
}

namespace {

Var task_loss(const EncoderSpec& spec, Tape& tape, const Var& output, const Dataset& batch) {
  if (spec.head == HeadKind::classification) {
    return softmax_cross_entropy(output, batch.labels);
  }
  const Var target = tape.constant(
      Tensor({batch.rows(), 1}, batch.targets));
  return mean(square(sub(output, target)));
}

bool any_enabled(const EncoderSpec& spec) {
  for (bool m : spec.mask) {
    if (m) return true;
  }
  return false;
}

}  // namespace

ObjectiveEval evaluate_objective(const EncoderSpec& spec, const Params& params,
                                 const Dataset& batch, const StepOptions& opts,
                                 bool with_grad) {
  Tape tape;
  std::vector<Var> leaves;
  for (auto& t : params.to_tensors()) leaves.push_back(tape.leaf(std::move(t), with_grad));
  const Var x = tape.constant(Tensor::from_matrix(batch.x));
  const auto fwd = forward_with_capture(spec, leaves, x);

  ObjectiveEval out;
  Var loss = task_loss(spec, tape, fwd.output, batch);
  out.task_loss = loss.value().item();
  if (any_enabled(spec)) {
    ElossOptions eo;
    eo.lambda = spec.lambda;
    eo.mask = spec.mask;
    eo.estimator = opts.estimator;
    eo.knn = opts.knn;
    eo.metric_for_disabled = false;
    auto reg = eloss_from_captures(fwd.captures, eo);
    out.eloss = reg.total.value().item();
    out.breakdown = std::move(reg.breakdown);
    // E_loss joins the task loss with unit weight; lambda lives inside D_b.
    loss = add(loss, reg.total);
  }
  out.total = loss.value().item();
  if (!std::isfinite(out.total)) {
    throw NonFiniteError("non-finite training objective (task " +
                         std::to_string(out.task_loss) + ", E_loss " +
                         std::to_string(out.eloss) + ")");
  }
  if (with_grad) {
    tape.backward(loss);
    for (const auto& l : leaves) out.grads.push_back(l.grad());
  }
  return out;
}

double objective(const EncoderSpec& spec, const Params& params, const Dataset& batch,
                 const StepOptions& opts) {
  return evaluate_objective(spec, params, batch, opts, false).total;
}

StepResult train_step(const EncoderSpec& spec, Params& params, const Dataset& batch,
                      const StepOptions& opts) {
  auto eval = evaluate_objective(spec, params, batch, opts, true);
  std::size_t gi = 0;
  auto update = [&](DenseLayer& l) {
    const auto& gw = eval.grads[gi++];
    const auto& gb = eval.grads[gi++];
    if (!gw.data().allFinite() || !gb.data().allFinite()) {
      throw NonFiniteError("non-finite gradient; training aborted");
    }
    l.weight -= opts.learning_rate * gw.matrix();
    l.bias -= opts.learning_rate * gb.data().transpose();
  };
  for (auto& l : params.layers) update(l);
  update(params.head);
  return {eval.task_loss, eval.eloss, std::move(eval.breakdown)};
}

}  // namespace eloss
