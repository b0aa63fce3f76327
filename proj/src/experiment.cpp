#include "eloss/experiment.hpp"

#include "eloss/audit.hpp"
#include "eloss/elft.hpp"
#include "eloss/errors.hpp"
#include "eloss/report.hpp"
#include "eloss/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace eloss {

namespace fs = std::filesystem;

void TrainingOptions::validate() const {
  if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("training.batch_size must be >= 2");
  if (eval_batch_size < 2) throw ConfigError("training.eval_batch_size must be >= 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("training.learning_rate must be positive");
  }
  if (knn.k < 1) throw ConfigError("training.k must be >= 1");
  if (estimator == Estimator::knn && batch_size <= knn.k) {
    throw ConfigError("training.batch_size must exceed k");
  }
}

namespace {

ElossOptions metric_options(const EncoderSpec& spec, Estimator estimator,
                            const KnnOptions& knn) {
  ElossOptions eo;
  eo.lambda = spec.lambda;
  eo.mask = spec.mask;
  eo.estimator = estimator;
  eo.knn = knn;
  eo.metric_for_disabled = true;
  return eo;
}

std::vector<std::vector<SampleMatrix>> to_samples(const Forward& fw) {
  std::vector<std::vector<SampleMatrix>> out(fw.captures.size());
  for (std::size_t b = 0; b < fw.captures.size(); ++b) {
    for (const auto& c : fw.captures[b]) out[b].emplace_back(c);
  }
  return out;
}

}  // namespace

ElossResult batch_breakdown(const EncoderSpec& spec, const Params& params,
                            const Eigen::Ref<const RowMatrix>& batch, Estimator estimator,
                            const KnnOptions& knn) {
  return eloss_from_samples(to_samples(forward(spec, params, batch)),
                            metric_options(spec, estimator, knn));
}

Evaluation evaluate(const EncoderSpec& spec, const Params& params, const Dataset& data,
                    int batch_size, Estimator estimator, const KnnOptions& knn) {
  if (batch_size < 2) throw ConfigError("evaluation batch size must be >= 2");
  const Forward full = forward(spec, params, data.x);
  Evaluation ev;
  const auto rows = Eigen::Index(data.rows());

  if (spec.head == HeadKind::classification) {
    const RowMatrix p = softmax_rows(full.output);
    std::size_t correct = 0;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      Eigen::Index arg = 0;
      p.row(i).maxCoeff(&arg);
      const int label = data.labels[std::size_t(i)];
      if (arg == label) ++correct;
      nll -= std::log(std::max(p(i, label), std::numeric_limits<double>::min()));
    }
    ev.val_metric = double(correct) / double(rows);
    ev.task_loss = nll / double(rows);
    ev.confidence = confidence(spec, full.output);
  } else {
    const double mse = (full.output.col(0) - data.targets).squaredNorm() / double(rows);
    ev.val_metric = -mse;
    ev.task_loss = mse;
    ev.confidence = std::numeric_limits<double>::quiet_NaN();
  }

  // Entropy statistics per batch of consecutive rows, averaged.
  const std::size_t bs = std::min<std::size_t>(std::size_t(batch_size), data.rows());
  const std::size_t batches = data.rows() / bs;
  const auto blocks = std::size_t(spec.blocks);
  const auto layers = std::size_t(spec.layers_per_block);
  std::vector<double> pen(blocks, 0.0);
  std::vector<std::vector<double>> ent(blocks, std::vector<double>(layers, 0.0));
  std::vector<bool> underdetermined(blocks, false);
  const ElossOptions eo = metric_options(spec, estimator, knn);
  for (std::size_t k = 0; k < batches; ++k) {
    std::vector<std::vector<SampleMatrix>> caps(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
      for (const auto& c : full.captures[b]) {
        caps[b].emplace_back(c.middleRows(Eigen::Index(k * bs), Eigen::Index(bs)));
      }
    }
    const ElossResult r = eloss_from_samples(caps, eo);
    for (std::size_t b = 0; b < blocks; ++b) {
      pen[b] += r.breakdown.blocks[b].penalty;
      underdetermined[b] = r.breakdown.blocks[b].underdetermined;
      for (std::size_t n = 0; n < layers; ++n) ent[b][n] += r.trajectories[b].entropies[n];
    }
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    pen[b] /= double(batches);
    for (auto& h : ent[b]) h /= double(batches);
    ev.trajectories.push_back(EntropyTrajectory::from_entropies(int(b), ent[b]));
  }
  ev.breakdown = eloss_total(pen, spec.lambda, spec.mask);
  for (std::size_t b = 0; b < blocks; ++b) {
    ev.breakdown.blocks[b].underdetermined = underdetermined[b];
  }
  return ev;
}

TrainResult train(const EncoderSpec& spec, const TaskData& data, const TrainingOptions& opts) {
  spec.validate();
  opts.validate();
  const std::size_t n = data.train.rows();
  const auto bs = std::size_t(opts.batch_size);
  if (n < bs) throw ConfigError("fewer training rows than one batch");

  TrainResult out;
  out.params = init_params(spec);
  Rng rng = Rng::stream(spec.seed, "batches");
  std::vector<std::size_t> perm(n);
  const StepOptions step = opts.step_options();
  double step_seconds = 0.0;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t(0));
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(perm[i], perm[std::size_t(rng.below(i + 1))]);
    }
    double loss = 0.0, reg = 0.0;
    const std::size_t steps = n / bs;
    for (std::size_t s = 0; s < steps; ++s) {
      const Dataset batch =
          gather(data.train, std::span<const std::size_t>(perm).subspan(s * bs, bs));
      const auto t0 = std::chrono::steady_clock::now();
      const StepResult r = train_step(spec, out.params, batch, step);
      step_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      loss += r.task_loss;
      reg += r.eloss;
      ++out.steps;
    }
    const Evaluation ev = evaluate(spec, out.params, data.validation, opts.eval_batch_size,
                                   opts.estimator, opts.knn);
    TrainRecord rec;
    rec.epoch = epoch;
    rec.task_loss = loss / double(steps);
    rec.eloss = reg / double(steps);
    for (const auto& b : ev.breakdown.blocks) rec.penalties.push_back(b.penalty);
    rec.val_metric = ev.val_metric;
    rec.confidence = ev.confidence;
    out.records.push_back(std::move(rec));
    if (epoch + 1 == opts.epochs) out.final_eval = ev;
  }
  out.seconds_per_step = step_seconds / double(out.steps);
  return out;
}

void ExperimentConfig::validate() const {
  task.validate();
  encoder.validate();
  training.validate();
  if (encoder.input_dim != task.input_dim) {
    throw ConfigError("encoder input_dim must equal task input_dim");
  }
  if (audit.calibration_batches < 2) throw ConfigError("audit.calibration_batches must be >= 2");
  if (audit.batch_size < 2) throw ConfigError("audit.batch_size must be >= 2");
  if (!(audit.z > 0.0)) throw ConfigError("audit.z must be positive");
  if (sweep.empty()) throw ConfigError("sweep must list at least one block count");
  for (int c : sweep) {
    if (c < 0 || c > encoder.blocks) {
      throw ConfigError("sweep entry " + std::to_string(c) + " outside [0, " +
                        std::to_string(encoder.blocks) + "]");
    }
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

EncoderSpec ExperimentConfig::run_spec(int enabled) const {
  if (enabled < 0 || enabled > encoder.blocks) {
    throw ConfigError("enabled block count " + std::to_string(enabled) + " out of range");
  }
  EncoderSpec s = encoder;
  s.input_dim = task.input_dim;
  s.mask.assign(std::size_t(s.blocks), false);
  for (int b = 0; b < enabled; ++b) s.mask[std::size_t(b)] = true;
  return s;
}

std::string run_dir_name(int enabled_blocks) {
  return "blocks_" + std::to_string(enabled_blocks);
}

std::string settings_hash(const EncoderSpec& spec, Estimator estimator, const KnnOptions& knn,
                          int batch_size) {
  std::ostringstream o;
  o << "M=" << spec.blocks << ";N=" << spec.layers_per_block << ";in=" << spec.input_dim
    << ";widths=";
  for (int w : spec.widths) o << w << ',';
  o << ";act=" << (spec.activation == Activation::tanh ? "tanh" : "relu")
    << ";head=" << (spec.head == HeadKind::classification ? "cls" : "reg")
    << ";classes=" << spec.num_classes << ";estimator=" << to_string(estimator)
    << ";k=" << knn.k << ";batch=" << batch_size;
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(o.str())));
  return buf;
}

namespace {

Json final_json(const Evaluation& ev) {
  Json f = {{"val_metric", real_json(ev.val_metric)}, {"task_loss", real_json(ev.task_loss)}};
  if (std::isfinite(ev.confidence)) f["confidence"] = real_json(ev.confidence);
  return f;
}

Params float32_params(const EncoderSpec& spec, const Params& p) {
  std::vector<Tensor> ts;
  for (const auto& t : p.to_tensors()) ts.push_back(round_to_float32(t));
  return Params::from_tensors(spec, ts);
}

}  // namespace

std::vector<SweepEntry> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const TaskData data = generate_task(config.task);
  const fs::path root(config.output_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

  std::vector<SweepEntry> entries;
  for (int enabled : config.sweep) {
    const EncoderSpec spec = config.run_spec(enabled);
    const fs::path dir = root / run_dir_name(enabled);
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const TrainResult tr = train(spec, data, config.training);

    Json cfg = config_to_json(config);
    Json mask = Json::array();
    for (bool m : spec.mask) mask.push_back(bool(m));
    cfg["run"] = {{"enabled_blocks", enabled}, {"mask", mask}};
    write_json(cfg, dir / "config.json");
    write_records_csv(tr.records, dir / "records.csv");
    const auto tensors = tr.params.to_tensors();
    elft_write_all(tensors, dir / "params.bin");

    Json traj = Json::array();
    for (const auto& t : tr.final_eval.trajectories) traj.push_back(to_json(t));
    write_json({{"epoch", tr.records.back().epoch},
                {"split", "validation"},
                {"breakdown", to_json(tr.final_eval.breakdown)},
                {"trajectories", traj},
                {"final", final_json(tr.final_eval)}},
               dir / "breakdown.json");

    // The band is calibrated with the parameters exactly as stored on disk.
    const Params stored = float32_params(spec, tr.params);
    const ToleranceBand band = calibrate_model_band(spec, stored, config.task, config.audit,
                                                    config.training.estimator,
                                                    config.training.knn);
    write_json(to_json(band), dir / "band.json");

    SweepEntry e;
    e.enabled_blocks = enabled;
    e.run_dir = dir;
    e.final_val_metric = tr.records.back().val_metric;
    e.max_val_metric = -std::numeric_limits<double>::infinity();
    for (const auto& r : tr.records) e.max_val_metric = std::max(e.max_val_metric, r.val_metric);
    e.final_mean_penalty = tr.final_eval.breakdown.mean_penalty();
    e.ms_per_step = 1e3 * tr.seconds_per_step;
    write_json({{"steps", tr.steps}, {"ms_per_step", real_json(e.ms_per_step)}},
               dir / "timing.json");
    entries.push_back(e);
  }

  std::ostringstream csv;
  csv << "enabled_blocks,final_val_metric,max_val_metric,final_mean_penalty,ms_per_step\n";
  Json rows = Json::array();
  for (const auto& e : entries) {
    csv << e.enabled_blocks << ',' << format_real(e.final_val_metric) << ','
        << format_real(e.max_val_metric) << ',' << format_real(e.final_mean_penalty) << ','
        << format_real(e.ms_per_step) << '\n';
    rows.push_back({{"enabled_blocks", e.enabled_blocks},
                    {"run_dir", e.run_dir.filename().string()},
                    {"final_val_metric", real_json(e.final_val_metric)},
                    {"max_val_metric", real_json(e.max_val_metric)},
                    {"final_mean_penalty", real_json(e.final_mean_penalty)},
                    {"ms_per_step", real_json(e.ms_per_step)}});
  }
  write_text(csv.str(), root / "sweep.csv");
  write_json({{"config_hash", config_hash(config)}, {"runs", rows}}, root / "sweep.json");
  return entries;
}

}  // namespace eloss
