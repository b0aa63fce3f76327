#pragma once

#include "eloss/audit.hpp"
#include "eloss/experiment.hpp"
#include "eloss/pca.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace eloss {

using Json = nlohmann::ordered_json;

/// Shortest text that reads back to the same double ("%.17g").
std::string format_real(double v);
/// A finite number, or the tokens "+inf" / "-inf". NaN is rejected.
Json real_json(double v);
double real_from_json(const Json& j);

Json to_json(const ElossBreakdown& b);
ElossBreakdown breakdown_from_json(const Json& j);
Json to_json(const EntropyTrajectory& t);
Json to_json(const ToleranceBand& band);
ToleranceBand band_from_json(const Json& j);
Json to_json(const AnomalyVerdict& v);
Json to_json(const Pca2Summary& p);
Json to_json(std::span<const CurveRow> rows);

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);
std::string to_string(MavpMode m);

/// config.json: every field optional, unknown keys rejected with ConfigError.
///   seed          u64, shared by task data and initialization
///   task          input_dim, informative_dims, nuisance_dims, noise_std,
///                 train_rows, validation_rows
///   encoder       blocks, layers_per_block, widths[], head
///                 ("classification" | "regression"), num_classes,
///                 activation ("tanh" | "relu"), lambda
///   training      epochs, batch_size, learning_rate, eval_batch_size,
///                 estimator ("knn" | "gaussian"), k
///   audit         calibration_batches, batch_size, z
///   sweep         enabled-block counts, one run each
///   output_dir    string
///   run           written into run directories: enabled_blocks, mask
Json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const Json& j);
/// Parses a config file; ELOSS_SEED, when set, replaces the seed.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Hex fnv1a64 of the canonical config text.
std::string config_hash(const ExperimentConfig& c);

Json read_json(const std::filesystem::path& path);
void write_json(const Json& j, const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);

/// records.csv: header epoch,task_loss,eloss,val_metric,confidence,
/// penalty_0..penalty_{M-1}; reals in "%.17g", NaN written as "nan".
std::string records_csv(std::span<const TrainRecord> records);
void write_records_csv(std::span<const TrainRecord> records,
                       const std::filesystem::path& path);
std::vector<TrainRecord> read_records_csv(const std::filesystem::path& path);

/// A trained run directory loaded back from disk.
struct RunArtifacts {
  std::filesystem::path dir;
  ExperimentConfig config;
  int enabled_blocks = 0;
  EncoderSpec spec;
  Params params;
};
RunArtifacts load_run(const std::filesystem::path& dir);

struct ReportOptions {
  bool pca = false;
  bool curves = false;
  std::size_t window = 1;
};

/// Assembles the report document for a run directory and writes report.json,
/// trajectories.csv and entropy.svg (plus curves.svg with `curves`) into it.
Json build_report(const std::filesystem::path& run_dir, const ReportOptions& opts);

/// Carried in every report; schemas/report.schema.json pins the same value.
inline constexpr const char* kReportSchemaVersion = "1";

}  // namespace eloss
