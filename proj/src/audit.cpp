#include "eloss/audit.hpp"

#include "eloss/errors.hpp"
#include "eloss/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eloss {

double percent_delta(double reference, double observed) {
  if (reference == 0.0) {
    throw DomainError("percent delta is undefined for a zero reference");
  }
  return std::abs((observed - reference) / reference) * 100.0;
}

ToleranceBand calibrate_band(std::span<const ElossBreakdown> nominal, double z) {
  if (nominal.size() < 2) {
    throw InsufficientSamplesError("band calibration needs >= 2 breakdowns, got " +
                                   std::to_string(nominal.size()));
  }
  if (!(z > 0.0)) throw ConfigError("band threshold z must be positive");
  const std::size_t blocks = nominal.front().blocks.size();
  for (const auto& b : nominal) {
    if (b.blocks.size() != blocks) {
      throw ConfigError("calibration breakdowns disagree on the block count");
    }
  }
  ToleranceBand band;
  band.z = z;
  band.n_calib = nominal.size();
  const double count = double(nominal.size());
  for (std::size_t b = 0; b < blocks; ++b) {
    double s = 0.0;
    for (const auto& br : nominal) s += br.blocks[b].penalty;
    const double mu = s / count;
    double ss = 0.0;
    for (const auto& br : nominal) {
      const double t = br.blocks[b].penalty - mu;
      ss += t * t;
    }
    band.blocks.push_back({nominal.front().blocks[b].block, mu, std::sqrt(ss / count)});
  }
  double m = 0.0;
  for (const auto& br : nominal) m += br.metric();
  band.metric_mean = m / count;
  return band;
}

AnomalyVerdict audit(const ElossBreakdown& observed, const ToleranceBand& band) {
  if (observed.blocks.size() != band.blocks.size()) {
    throw ConfigError("observation has " + std::to_string(observed.blocks.size()) +
                      " blocks, band has " + std::to_string(band.blocks.size()));
  }
  AnomalyVerdict v;
  v.max_z = -std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < band.blocks.size(); ++b) {
    const auto& ref = band.blocks[b];
    if (observed.blocks[b].block != ref.block) {
      throw ConfigError("block ids of observation and band differ");
    }
    const double l = observed.blocks[b].penalty;
    double zs = 0.0;
    if (ref.stddev > 0.0) {
      zs = (l - ref.mean) / ref.stddev;
    } else if (l != ref.mean) {
      zs = std::numeric_limits<double>::infinity();
    }
    v.penalties.push_back(l);
    v.z_scores.push_back(zs);
    v.max_z = std::max(v.max_z, zs);
    if (zs > band.z) v.offending_blocks.push_back(ref.block);
  }
  v.flag = v.max_z > band.z;
  v.metric = observed.metric();
  if (band.metric_mean != 0.0) v.percent_delta = percent_delta(band.metric_mean, v.metric);
  return v;
}

ToleranceBand calibrate_model_band(const EncoderSpec& spec, const Params& params,
                                   const SyntheticTask& task, const AuditSettings& settings,
                                   Estimator estimator, const KnnOptions& knn) {
  if (settings.calibration_batches < 2) {
    throw InsufficientSamplesError("band calibration needs at least 2 batches");
  }
  std::vector<ElossBreakdown> nominal;
  double conf = 0.0;
  for (int i = 0; i < settings.calibration_batches; ++i) {
    const Dataset batch = sample_task(task, std::size_t(settings.batch_size),
                                      derive_seed(task.seed, "calibration", std::uint64_t(i)));
    nominal.push_back(batch_breakdown(spec, params, batch.x, estimator, knn).breakdown);
    if (spec.head == HeadKind::classification) {
      conf += confidence(spec, forward(spec, params, batch.x).output);
    }
  }
  ToleranceBand band = calibrate_band(nominal, settings.z);
  if (spec.head == HeadKind::classification) {
    band.confidence_mean = conf / settings.calibration_batches;
  }
  band.settings_hash = settings_hash(spec, estimator, knn, settings.batch_size);
  return band;
}

AnomalyVerdict audit_batch(const EncoderSpec& spec, const Params& params,
                           const Eigen::Ref<const RowMatrix>& batch,
                           const ToleranceBand& band, Estimator estimator,
                           const KnnOptions& knn) {
  AnomalyVerdict v = audit(batch_breakdown(spec, params, batch, estimator, knn).breakdown, band);
  if (spec.head == HeadKind::classification) {
    v.confidence = confidence(spec, forward(spec, params, batch).output);
    if (band.confidence_mean && *band.confidence_mean != 0.0) {
      v.confidence_percent_delta = percent_delta(*band.confidence_mean, *v.confidence);
    }
  }
  return v;
}

double mavp(std::span<const double> series, std::size_t window, MavpMode mode) {
  if (window == 0) throw DomainError("MAVP window must be positive");
  if (series.size() < 2 * window) {
    throw DomainError("MAVP needs at least 2 windows of " + std::to_string(window) +
                      " values, got " + std::to_string(series.size()));
  }
  const std::size_t windows = series.size() / window;
  std::vector<double> x(windows);
  for (std::size_t k = 0; k < windows; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < window; ++i) s += series[k * window + i];
    x[k] = s / double(window);
  }
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < windows; ++k) {
    total += mode == MavpMode::verbatim ? std::abs(x[k + 1]) - std::abs(x[k])
                                        : std::abs(x[k + 1] - x[k]);
  }
  return total / double(windows - 1);
}

std::vector<double> record_series(std::span<const TrainRecord> records,
                                  const std::string& metric) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (metric == "task_loss") {
      out.push_back(r.task_loss);
    } else if (metric == "eloss") {
      out.push_back(r.eloss);
    } else if (metric == "val_metric") {
      out.push_back(r.val_metric);
    } else if (metric == "confidence") {
      out.push_back(r.confidence);
    } else if (metric == "mean_penalty") {
      double s = 0.0;
      for (double p : r.penalties) s += p;
      out.push_back(r.penalties.empty() ? 0.0 : s / double(r.penalties.size()));
    } else if (metric.rfind("penalty_", 0) == 0) {
      std::size_t b = 0;
      try {
        b = std::stoul(metric.substr(8));
      } catch (const std::exception&) {
        throw ConfigError("unknown metric '" + metric + "'");
      }
      if (b >= r.penalties.size()) throw ConfigError("unknown metric '" + metric + "'");
      out.push_back(r.penalties[b]);
    } else {
      throw ConfigError("unknown metric '" + metric + "'");
    }
  }
  return out;
}

CurveStats curve_stats(std::span<const TrainRecord> records, const std::string& metric,
                       std::size_t window, MavpMode mode) {
  const auto series = record_series(records, metric);
  if (series.empty()) throw DomainError("curve stats of an empty record list");
  return {*std::max_element(series.begin(), series.end()), mavp(series, window, mode)};
}

std::vector<CurveRow> paired_curve_table(std::span<const TrainRecord> with,
                                         std::span<const TrainRecord> without,
                                         const std::string& metric, std::size_t window,
                                         MavpMode mode) {
  const auto a = curve_stats(without, metric, window, mode);
  const auto b = curve_stats(with, metric, window, mode);
  return {{"without", a}, {"with", b}, {"Delta", {b.max - a.max, b.mavp - a.mavp}}};
}

}  // namespace eloss
