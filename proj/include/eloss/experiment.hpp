#pragma once

#include "eloss/encoder.hpp"
#include "eloss/regularizer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace eloss {

struct TrainRecord {
  int epoch = 0;
  double task_loss = 0.0;  // mean over the epoch's training steps
  double eloss = 0.0;      // mean E_loss term over the epoch's training steps
  std::vector<double> penalties;  // per-block L_b on the validation split
  double val_metric = 0.0;  // accuracy, or negative MSE for regression
  double confidence = 0.0;  // NaN for a regression head
};

struct TrainingOptions {
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-2;
  int eval_batch_size = 64;
  Estimator estimator = Estimator::knn;
  KnnOptions knn;

  void validate() const;
  StepOptions step_options() const { return {learning_rate, estimator, knn}; }
};

struct Evaluation {
  double val_metric = 0.0;
  double confidence = 0.0;
  double task_loss = 0.0;
  ElossBreakdown breakdown;  // every block, L_b averaged over eval batches
  std::vector<EntropyTrajectory> trajectories;  // entropies averaged over batches
};

/// Validation metrics plus a per-block breakdown from consecutive batches of
/// `batch_size` rows (a trailing partial batch is dropped; one batch of all
/// rows when the split is smaller than batch_size).
Evaluation evaluate(const EncoderSpec& spec, const Params& params, const Dataset& data,
                    int batch_size, Estimator estimator, const KnnOptions& knn);

/// Per-block breakdown of a single batch in metric mode (all blocks).
ElossResult batch_breakdown(const EncoderSpec& spec, const Params& params,
                            const Eigen::Ref<const RowMatrix>& batch,
                            Estimator estimator, const KnnOptions& knn);

struct TrainResult {
  Params params;
  std::vector<TrainRecord> records;
  Evaluation final_eval;
  std::size_t steps = 0;
  double seconds_per_step = 0.0;  // mean wall time of train_step
};

/// SGD over shuffled full mini-batches (Rng::stream(spec.seed, "batches")),
/// one TrainRecord per epoch.
TrainResult train(const EncoderSpec& spec, const TaskData& data,
                  const TrainingOptions& opts);

struct AuditSettings {
  int calibration_batches = 50;
  int batch_size = 512;
  double z = 3.0;
};

struct ExperimentConfig {
  SyntheticTask task;
  EncoderSpec encoder;
  TrainingOptions training;
  AuditSettings audit;
  /// Number of leading blocks with E_loss enabled, one run per entry.
  std::vector<int> sweep{0, 1, 2};
  std::string output_dir = "runs";

  void validate() const;
  /// Encoder for one sweep entry: mask enables the first `enabled` blocks.
  EncoderSpec run_spec(int enabled) const;
};

struct SweepEntry {
  int enabled_blocks = 0;
  std::filesystem::path run_dir;
  double final_val_metric = 0.0;
  double max_val_metric = 0.0;
  double final_mean_penalty = 0.0;
  double ms_per_step = 0.0;
};

/// Trains every sweep entry from the same initialization and data and
/// writes <output_dir>/blocks_<c>/ run directories plus sweep.csv.
std::vector<SweepEntry> run_experiment(const ExperimentConfig& config);

std::string run_dir_name(int enabled_blocks);

/// Fingerprint of everything that changes the meaning of an L_b value:
/// encoder layout, activation, estimator, k and the scoring batch size.
/// A band whose hash differs from the model it is applied to is stale.
std::string settings_hash(const EncoderSpec& spec, Estimator estimator,
                          const KnnOptions& knn, int batch_size);

}  // namespace eloss
