#pragma once

#include "eloss/entropy.hpp"
#include "eloss/regularizer.hpp"
#include "eloss/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace eloss {

enum class Activation { tanh, relu };
enum class HeadKind { classification, regression };

/// M blocks of N dense layers; every layer in block b has width widths[b].
struct EncoderSpec {
  int blocks = 2;            // M
  int layers_per_block = 4;  // N
  std::vector<int> widths{16, 16};
  int input_dim = 16;
  HeadKind head = HeadKind::classification;
  int num_classes = 2;
  Activation activation = Activation::tanh;
  double lambda = 1.0;
  std::vector<bool> mask{true, true};  // per-block E_loss enable
  std::uint64_t seed = 0;

  /// Throws ConfigError unless M >= 1, N >= 3, widths/mask sized M, lambda >= 0.
  void validate() const;
  int output_dim() const { return head == HeadKind::classification ? num_classes : 1; }
  std::size_t layer_count() const { return std::size_t(blocks * layers_per_block); }
};

struct DenseLayer {
  RowMatrix weight;          // fan_in x fan_out
  Eigen::RowVectorXd bias;   // fan_out
};

struct Params {
  std::vector<DenseLayer> layers;  // block-major: block 0 layers, then block 1...
  DenseLayer head;

  std::size_t tensor_count() const { return 2 * (layers.size() + 1); }
  /// weight, bias pairs in layer order with the head last.
  std::vector<Tensor> to_tensors() const;
  static Params from_tensors(const EncoderSpec& spec, std::span<const Tensor> tensors);
};

/// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)) from
/// Rng::stream(spec.seed, "init"); zero biases.
Params init_params(const EncoderSpec& spec);

/// Inputs are i.i.d. N(0, 1) over input_dim = informative_dims + nuisance_dims.
/// Classification label is [sum of informative dims + noise > 0]; the
/// regression target is the same sum.
struct SyntheticTask {
  int input_dim = 16;
  int informative_dims = 4;
  int nuisance_dims = 12;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  int train_rows = 2000;
  int validation_rows = 500;

  void validate() const;
};

struct Dataset {
  RowMatrix x;
  std::vector<int> labels;   // classification
  Eigen::VectorXd targets;   // regression
  std::size_t rows() const { return std::size_t(x.rows()); }
};

struct TaskData {
  Dataset train;
  Dataset validation;
};

TaskData generate_task(const SyntheticTask& task);
/// Fresh rows from the task distribution on an independent stream.
Dataset sample_task(const SyntheticTask& task, std::size_t rows, std::uint64_t seed);

struct TapedForward {
  Var output;
  std::vector<std::vector<Var>> captures;  // [block][layer], batch x width
};

struct Forward {
  RowMatrix output;
  std::vector<std::vector<RowMatrix>> captures;
};

/// Records the forward pass on `tape`, with parameters as leaves in `leaves`
/// (same order as Params::to_tensors). Captures are post-activation outputs;
/// for a dense layer batch rows are samples and features are dimensions.
TapedForward forward_with_capture(const EncoderSpec& spec, std::span<const Var> leaves,
                                  const Var& batch);

/// Same computation without a tape.
Forward forward(const EncoderSpec& spec, const Params& params,
                const Eigen::Ref<const RowMatrix>& batch);

/// Mean over rows of the top softmax probability.
double confidence(const EncoderSpec& spec, const Eigen::Ref<const RowMatrix>& output);

struct StepOptions {
  double learning_rate = 1e-2;
  Estimator estimator = Estimator::knn;
  KnnOptions knn;
};

struct StepResult {
  double task_loss = 0.0;
  double eloss = 0.0;
  ElossBreakdown breakdown;  // enabled blocks only
};

/// One plain-SGD step on task_loss + E_loss (blocks per spec.mask). With no
/// enabled block the regularizer is never evaluated.
StepResult train_step(const EncoderSpec& spec, Params& params, const Dataset& batch,
                      const StepOptions& opts);

struct ObjectiveEval {
  double task_loss = 0.0;
  double eloss = 0.0;
  double total = 0.0;
  ElossBreakdown breakdown;  // enabled blocks only
  std::vector<Tensor> grads;  // Params::to_tensors order; empty unless requested
};

/// task_loss + E_loss on one batch, optionally with parameter gradients.
ObjectiveEval evaluate_objective(const EncoderSpec& spec, const Params& params,
                                 const Dataset& batch, const StepOptions& opts,
                                 bool with_grad);

/// Objective value only.
double objective(const EncoderSpec& spec, const Params& params, const Dataset& batch,
                 const StepOptions& opts);

/// Rows of `data` picked by index, in the given order.
Dataset gather(const Dataset& data, std::span<const std::size_t> rows);

}  // namespace eloss
