// eloss: train, entropy, corrupt, audit and report subcommands.
//
// Exit status: 0 success, 1 usage error, 2 data/format error,
// 3 anomaly flagged by `audit`.

#include "eloss/audit.hpp"
#include "eloss/corruption.hpp"
#include "eloss/elft.hpp"
#include "eloss/entropy.hpp"
#include "eloss/errors.hpp"
#include "eloss/experiment.hpp"
#include "eloss/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

namespace {

using namespace eloss;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAnomaly = 3;

struct TrainArgs {
  std::string config;
  std::string output_dir;
};

struct EntropyArgs {
  std::string input;
  int k = 1;
  SampleAxis mode = SampleAxis::channels_as_samples;
  Estimator estimator = Estimator::knn;
};

struct CorruptArgs {
  std::string input;
  CorruptionKind noise = CorruptionKind::gaussian;
  double sigma = 1.0;
  double fraction = 0.1;
  std::uint64_t seed = 0;
  std::string output;
};

struct AuditArgs {
  std::string input;
  std::string model;
  std::string band;
  bool json = false;
};

struct ReportArgs {
  std::string run;
  bool pca = false;
  bool curves = false;
  std::size_t window = 1;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  const auto entries = run_experiment(cfg);
  std::printf("%-8s %14s %14s %16s %12s\n", "blocks", "final_val", "max_val",
              "mean_L_b", "ms/step");
  for (const auto& e : entries) {
    std::printf("%-8d %14.6f %14.6f %16.6g %12.4f\n", e.enabled_blocks, e.final_val_metric,
                e.max_val_metric, e.final_mean_penalty, e.ms_per_step);
  }
  std::printf("runs written to %s\n", cfg.output_dir.c_str());
  return kExitOk;
}

int cmd_entropy(const EntropyArgs& a) {
  const Tensor t = elft_read(a.input);
  // A rank-1 file is a set of scalar samples.
  const Tensor shaped = t.rank() == 1 ? t.reshaped({t.size(), 1}) : t;
  const SampleMatrix s = features_to_samples(shaped, a.mode);
  const EntropyEstimate h = a.estimator == Estimator::knn
                                ? knn_entropy(s, KnnOptions{.k = a.k})
                                : gaussian_proxy_entropy(s);
  std::printf("%.10g\n", h.value);
  return kExitOk;
}

int cmd_corrupt(const CorruptArgs& a) {
  CorruptionConfig c;
  c.kind = a.noise;
  c.sigma = a.sigma;
  c.fraction = a.fraction;
  c.seed = a.seed;
  c.validate();
  elft_write(corrupt(elft_read(a.input), c), a.output);
  return kExitOk;
}

int cmd_audit(const AuditArgs& a) {
  const RunArtifacts run = load_run(a.model);
  const ToleranceBand band = band_from_json(read_json(a.band));
  const auto& cfg = run.config;
  const auto expect = settings_hash(run.spec, cfg.training.estimator, cfg.training.knn,
                                    cfg.audit.batch_size);
  if (band.settings_hash != expect) {
    throw ConfigError("band is stale: settings hash " + band.settings_hash +
                      " does not match the model (" + expect + "); recalibrate");
  }
  const Tensor input = elft_read(a.input);
  if (input.rank() != 2) throw DimensionError("audit input must be a rows x input_dim matrix");
  if (band.under_calibrated()) {
    std::fprintf(stderr, "warning: band calibrated on only %zu batches\n", band.n_calib);
  }
  const AnomalyVerdict v = audit_batch(run.spec, run.params, input.matrix(), band,
                                       cfg.training.estimator, cfg.training.knn);
  if (a.json) {
    std::cout << to_json(v).dump(2) << '\n';
  } else {
    std::printf("flag: %s\n", v.flag ? "ANOMALOUS" : "nominal");
    std::printf("max z: %s (threshold %g)\n", format_real(v.max_z).c_str(), band.z);
    for (std::size_t b = 0; b < v.penalties.size(); ++b) {
      std::printf("  block %zu: L_b = %.6g, z = %s\n", b, v.penalties[b],
                  format_real(v.z_scores[b]).c_str());
    }
    if (v.percent_delta) std::printf("E_loss metric delta: %.4g%%\n", *v.percent_delta);
    if (v.confidence_percent_delta) {
      std::printf("confidence: %.6g (delta %.4g%%)\n", *v.confidence,
                  *v.confidence_percent_delta);
    }
  }
  return v.flag ? kExitAnomaly : kExitOk;
}

int cmd_report(const ReportArgs& a) {
  const Json doc = build_report(a.run, ReportOptions{a.pca, a.curves, a.window});
  std::cout << doc.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-drop regularizer toolkit"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run the block-coverage sweep from a config");
  train->add_option("--config", ta.config, "config.json path")->required()->check(CLI::ExistingFile);
  train->add_option("--output-dir", ta.output_dir, "Override output_dir from the config");

  EntropyArgs ea;
  const std::map<std::string, SampleAxis> modes{
      {"channels_as_samples", SampleAxis::channels_as_samples},
      {"positions_as_samples", SampleAxis::positions_as_samples}};
  const std::map<std::string, Estimator> estimators{{"knn", Estimator::knn},
                                                    {"gaussian", Estimator::gaussian_diag}};
  auto* entropy = app.add_subcommand("entropy", "Estimate the entropy of an ELFT tensor (nats)");
  entropy->add_option("--input", ea.input, "ELFT file")->required();
  entropy->add_option("--k", ea.k, "Neighbour rank")->check(CLI::PositiveNumber);
  entropy->add_option("--mode", ea.mode, "Sample axis")
      ->transform(CLI::CheckedTransformer(modes, CLI::ignore_case));
  entropy->add_option("--estimator", ea.estimator, "knn or gaussian")
      ->transform(CLI::CheckedTransformer(estimators, CLI::ignore_case));

  CorruptArgs ca;
  const std::map<std::string, CorruptionKind> noises{{"gaussian", CorruptionKind::gaussian},
                                                     {"saltpepper", CorruptionKind::salt_pepper}};
  auto* corrupt_cmd = app.add_subcommand("corrupt", "Apply seeded input corruption");
  corrupt_cmd->add_option("--input", ca.input, "ELFT file")->required();
  corrupt_cmd->add_option("--noise", ca.noise, "gaussian or saltpepper")
      ->required()
      ->transform(CLI::CheckedTransformer(noises, CLI::ignore_case));
  corrupt_cmd->add_option("--sigma", ca.sigma, "Gaussian noise scale");
  corrupt_cmd->add_option("--fraction", ca.fraction, "Salt-pepper fraction of entries");
  corrupt_cmd->add_option("--seed", ca.seed, "Generator seed")->required();
  corrupt_cmd->add_option("--output", ca.output, "Output ELFT path")->required();

  AuditArgs aa;
  auto* audit_cmd = app.add_subcommand("audit", "Score an input batch against a band");
  audit_cmd->add_option("--input", aa.input, "ELFT batch, rows x input_dim")->required();
  audit_cmd->add_option("--model", aa.model, "Run directory")->required();
  audit_cmd->add_option("--band", aa.band, "band.json")->required();
  audit_cmd->add_flag("--json", aa.json, "Print the verdict as JSON");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Write report.json and plots for a run");
  report->add_option("--run", ra.run, "Run directory")->required();
  report->add_flag("--pca", ra.pca, "Include PCA density summaries");
  report->add_flag("--curves", ra.curves, "Include training-curve statistics and plots");
  report->add_option("--window", ra.window, "MAVP window")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*entropy) return cmd_entropy(ea);
    if (*corrupt_cmd) return cmd_corrupt(ca);
    if (*audit_cmd) return cmd_audit(aa);
    if (*report) return cmd_report(ra);
  } catch (const eloss::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
