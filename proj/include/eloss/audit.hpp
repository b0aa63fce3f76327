#pragma once

#include "eloss/experiment.hpp"
#include "eloss/regularizer.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eloss {

/// |(observed - reference) / reference| * 100; reference must be non-zero.
double percent_delta(double reference, double observed);

struct BlockBand {
  int block = 0;
  double mean = 0.0;    // mu_b of nominal L_b
  double stddev = 0.0;  // population std s_b
};

/// Per-block band of nominal L_b values. An observation flags when any block
/// lies more than z standard deviations above its nominal mean.
struct ToleranceBand {
  std::vector<BlockBand> blocks;
  double z = 3.0;
  std::size_t n_calib = 0;
  double metric_mean = 0.0;  // nominal mean of sum_b L_b
  std::optional<double> confidence_mean;
  std::string settings_hash;  // estimator/layout fingerprint; mismatches are stale

  static constexpr std::size_t kRecommendedCalibration = 20;
  bool under_calibrated() const { return n_calib < kRecommendedCalibration; }
};

ToleranceBand calibrate_band(std::span<const ElossBreakdown> nominal, double z = 3.0);

struct AnomalyVerdict {
  std::vector<double> penalties;  // observed L_b
  std::vector<double> z_scores;   // (L_b - mu_b) / s_b; +inf when s_b = 0 and L_b != mu_b
  double max_z = 0.0;
  bool flag = false;              // max_z > band.z
  std::vector<int> offending_blocks;
  double metric = 0.0;            // observed sum_b L_b
  std::optional<double> percent_delta;  // metric vs band.metric_mean
  std::optional<double> confidence;
  std::optional<double> confidence_percent_delta;
};

AnomalyVerdict audit(const ElossBreakdown& observed, const ToleranceBand& band);

/// Band from `settings.calibration_batches` fresh clean batches of
/// `settings.batch_size` rows (batch i drawn with
/// derive_seed(task.seed, "calibration", i)). Records the nominal mean
/// confidence for classification heads.
ToleranceBand calibrate_model_band(const EncoderSpec& spec, const Params& params,
                                   const SyntheticTask& task, const AuditSettings& settings,
                                   Estimator estimator, const KnnOptions& knn);

/// Scores one input batch against the band, including the confidence
/// readout and its %Δ when the band carries a nominal confidence.
AnomalyVerdict audit_batch(const EncoderSpec& spec, const Params& params,
                           const Eigen::Ref<const RowMatrix>& batch,
                           const ToleranceBand& band, Estimator estimator,
                           const KnnOptions& knn);

enum class MavpMode {
  verbatim,  // (1/N) sum (|x_{k+1}| - |x_k|), the formula as printed
  abs_diff,  // (1/N) sum |x_{k+1} - x_k|, a volatility score
};

/// Mean absolute value slope over non-overlapping windows: x_k is the mean of
/// window k, N the number of adjacent window pairs. A trailing partial
/// window is dropped.
double mavp(std::span<const double> series, std::size_t window = 1,
            MavpMode mode = MavpMode::verbatim);

struct CurveStats {
  double max = 0.0;
  double mavp = 0.0;
};

/// Metric names: task_loss, eloss, val_metric, confidence, mean_penalty,
/// penalty_<b>.
std::vector<double> record_series(std::span<const TrainRecord> records,
                                  const std::string& metric);

CurveStats curve_stats(std::span<const TrainRecord> records, const std::string& metric,
                       std::size_t window = 1, MavpMode mode = MavpMode::verbatim);

struct CurveRow {
  std::string method;  // "without", "with", "Delta"
  CurveStats stats;
};

/// Rows for a with/without comparison; Delta = with - without.
std::vector<CurveRow> paired_curve_table(std::span<const TrainRecord> with,
                                         std::span<const TrainRecord> without,
                                         const std::string& metric, std::size_t window = 1,
                                         MavpMode mode = MavpMode::verbatim);

}  // namespace eloss
