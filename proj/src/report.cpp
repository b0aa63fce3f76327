#include "eloss/report.hpp"

#include "eloss/elft.hpp"
#include "eloss/errors.hpp"
#include "eloss/rng.hpp"
#include "eloss/svg.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace eloss {

namespace fs = std::filesystem;

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json real_json(double v) {
  if (std::isnan(v)) throw NonFiniteError("NaN cannot be written to a report");
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return v;
}

double real_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw ConfigError("expected a number or \"+inf\"/\"-inf\", got " + j.dump());
}

namespace {

Json reals(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(real_json(x));
  return a;
}

// Strict object reader: every key must be consumed or declared optional.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type: " + it->dump());
    }
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + where_ + "." + it.key());
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename T>
T required(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("missing key ") + key);
  try {
    return it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("key ") + key + " has the wrong type");
  }
}

}  // namespace

Json to_json(const ElossBreakdown& b) {
  Json blocks = Json::array();
  for (const auto& t : b.blocks) {
    blocks.push_back({{"block", t.block},
                      {"penalty", real_json(t.penalty)},
                      {"divergence", real_json(t.divergence)},
                      {"enabled", t.enabled},
                      {"underdetermined", t.underdetermined}});
  }
  return {{"lambda", real_json(b.lambda)},
          {"total", real_json(b.total)},
          {"metric", real_json(b.metric())},
          {"blocks", blocks}};
}

ElossBreakdown breakdown_from_json(const Json& j) {
  ElossBreakdown b;
  b.lambda = real_from_json(j.at("lambda"));
  b.total = real_from_json(j.at("total"));
  for (const auto& t : j.at("blocks")) {
    BlockTerm term;
    term.block = required<int>(t, "block");
    term.penalty = real_from_json(t.at("penalty"));
    term.divergence = real_from_json(t.at("divergence"));
    term.enabled = required<bool>(t, "enabled");
    term.underdetermined = required<bool>(t, "underdetermined");
    b.blocks.push_back(term);
  }
  return b;
}

Json to_json(const EntropyTrajectory& t) {
  return {{"block", t.block}, {"entropies", reals(t.entropies)}, {"drops", reals(t.drops)}};
}

Json to_json(const ToleranceBand& band) {
  Json blocks = Json::array();
  for (const auto& b : band.blocks) {
    blocks.push_back(
        {{"block", b.block}, {"mean", real_json(b.mean)}, {"stddev", real_json(b.stddev)}});
  }
  Json j = {{"z", real_json(band.z)},
            {"n_calib", band.n_calib},
            {"metric_mean", real_json(band.metric_mean)},
            {"settings_hash", band.settings_hash},
            {"blocks", blocks}};
  if (band.confidence_mean) j["confidence_mean"] = real_json(*band.confidence_mean);
  return j;
}

ToleranceBand band_from_json(const Json& j) {
  try {
    ToleranceBand band;
    band.z = real_from_json(j.at("z"));
    band.n_calib = required<std::size_t>(j, "n_calib");
    band.metric_mean = real_from_json(j.at("metric_mean"));
    band.settings_hash = required<std::string>(j, "settings_hash");
    if (j.contains("confidence_mean")) {
      band.confidence_mean = real_from_json(j.at("confidence_mean"));
    }
    for (const auto& b : j.at("blocks")) {
      BlockBand bb;
      bb.block = required<int>(b, "block");
      bb.mean = real_from_json(b.at("mean"));
      bb.stddev = real_from_json(b.at("stddev"));
      if (!(bb.stddev >= 0.0)) throw ConfigError("band stddev must be >= 0");
      band.blocks.push_back(bb);
    }
    if (!(band.z > 0.0)) throw ConfigError("band z must be positive");
    return band;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed band: ") + e.what());
  }
}

Json to_json(const AnomalyVerdict& v) {
  Json j = {{"flag", v.flag},
            {"max_z", real_json(v.max_z)},
            {"penalties", reals(v.penalties)},
            {"z_scores", reals(v.z_scores)},
            {"offending_blocks", v.offending_blocks},
            {"metric", real_json(v.metric)}};
  if (v.percent_delta) j["percent_delta"] = real_json(*v.percent_delta);
  if (v.confidence) j["confidence"] = real_json(*v.confidence);
  if (v.confidence_percent_delta) {
    j["confidence_percent_delta"] = real_json(*v.confidence_percent_delta);
  }
  return j;
}

Json to_json(const Pca2Summary& p) {
  const auto vec = [](const Eigen::VectorXd& v) {
    return reals(std::span<const double>(v.data(), std::size_t(v.size())));
  };
  return {{"axis1", vec(p.axis1)},
          {"axis2", vec(p.axis2)},
          {"fit1", {{"mean", real_json(p.fit1.mean)}, {"stddev", real_json(p.fit1.stddev)}}},
          {"fit2", {{"mean", real_json(p.fit2.mean)}, {"stddev", real_json(p.fit2.stddev)}}},
          {"explained", {real_json(p.explained1), real_json(p.explained2)}},
          {"second_degenerate", p.second_degenerate}};
}

Json to_json(std::span<const CurveRow> rows) {
  Json a = Json::array();
  for (const auto& r : rows) {
    a.push_back({{"method", r.method},
                 {"max", real_json(r.stats.max)},
                 {"mavp", real_json(r.stats.mavp)}});
  }
  return a;
}

std::string to_string(Estimator e) { return e == Estimator::knn ? "knn" : "gaussian"; }

Estimator estimator_from_string(const std::string& s) {
  if (s == "knn") return Estimator::knn;
  if (s == "gaussian") return Estimator::gaussian_diag;
  throw ConfigError("unknown estimator '" + s + "' (expected knn or gaussian)");
}

std::string to_string(MavpMode m) { return m == MavpMode::verbatim ? "verbatim" : "abs_diff"; }

Json config_to_json(const ExperimentConfig& c) {
  const auto& t = c.task;
  const auto& e = c.encoder;
  const auto& tr = c.training;
  return {
      {"seed", e.seed},
      {"task",
       {{"input_dim", t.input_dim},
        {"informative_dims", t.informative_dims},
        {"nuisance_dims", t.nuisance_dims},
        {"noise_std", t.noise_std},
        {"train_rows", t.train_rows},
        {"validation_rows", t.validation_rows}}},
      {"encoder",
       {{"blocks", e.blocks},
        {"layers_per_block", e.layers_per_block},
        {"widths", e.widths},
        {"head", e.head == HeadKind::classification ? "classification" : "regression"},
        {"num_classes", e.num_classes},
        {"activation", e.activation == Activation::tanh ? "tanh" : "relu"},
        {"lambda", e.lambda}}},
      {"training",
       {{"epochs", tr.epochs},
        {"batch_size", tr.batch_size},
        {"learning_rate", tr.learning_rate},
        {"eval_batch_size", tr.eval_batch_size},
        {"estimator", to_string(tr.estimator)},
        {"k", tr.knn.k}}},
      {"audit",
       {{"calibration_batches", c.audit.calibration_batches},
        {"batch_size", c.audit.batch_size},
        {"z", c.audit.z}}},
      {"sweep", c.sweep},
      {"output_dir", c.output_dir}};
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  Fields top(j, "config");
  std::uint64_t seed = c.encoder.seed;
  top.get("seed", seed);
  c.task.seed = c.encoder.seed = seed;

  if (const Json* t = top.sub("task")) {
    Fields f(*t, "task");
    f.get("input_dim", c.task.input_dim);
    f.get("informative_dims", c.task.informative_dims);
    f.get("nuisance_dims", c.task.nuisance_dims);
    f.get("noise_std", c.task.noise_std);
    f.get("train_rows", c.task.train_rows);
    f.get("validation_rows", c.task.validation_rows);
    f.finish();
  }
  c.encoder.input_dim = c.task.input_dim;

  if (const Json* e = top.sub("encoder")) {
    Fields f(*e, "encoder");
    f.get("blocks", c.encoder.blocks);
    f.get("layers_per_block", c.encoder.layers_per_block);
    f.get("widths", c.encoder.widths);
    std::string head = "classification", act = "tanh";
    f.get("head", head);
    f.get("activation", act);
    f.get("num_classes", c.encoder.num_classes);
    f.get("lambda", c.encoder.lambda);
    f.finish();
    if (head == "classification") {
      c.encoder.head = HeadKind::classification;
    } else if (head == "regression") {
      c.encoder.head = HeadKind::regression;
    } else {
      throw ConfigError("unknown head '" + head + "'");
    }
    if (act == "tanh") {
      c.encoder.activation = Activation::tanh;
    } else if (act == "relu") {
      c.encoder.activation = Activation::relu;
    } else {
      throw ConfigError("unknown activation '" + act + "'");
    }
  }
  c.encoder.mask.assign(std::size_t(std::max(c.encoder.blocks, 0)), true);

  if (const Json* t = top.sub("training")) {
    Fields f(*t, "training");
    f.get("epochs", c.training.epochs);
    f.get("batch_size", c.training.batch_size);
    f.get("learning_rate", c.training.learning_rate);
    f.get("eval_batch_size", c.training.eval_batch_size);
    std::string est = "knn";
    f.get("estimator", est);
    f.get("k", c.training.knn.k);
    f.finish();
    c.training.estimator = estimator_from_string(est);
  }

  if (const Json* a = top.sub("audit")) {
    Fields f(*a, "audit");
    f.get("calibration_batches", c.audit.calibration_batches);
    f.get("batch_size", c.audit.batch_size);
    f.get("z", c.audit.z);
    f.finish();
  }
  top.get("sweep", c.sweep);
  top.get("output_dir", c.output_dir);
  top.sub("run");
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  Json j = read_json(path);
  if (const char* env = std::getenv("ELOSS_SEED"); env && *env) {
    std::uint64_t seed = 0;
    const char* end = env + std::char_traits<char>::length(env);
    auto [ptr, ec] = std::from_chars(env, end, seed);
    if (ec != std::errc() || ptr != end) {
      throw ConfigError(std::string("ELOSS_SEED is not an unsigned 64-bit integer: ") + env);
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    j["seed"] = seed;
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(c).dump())));
  return buf;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const Json& j, const fs::path& path) { write_text(j.dump(2) + "\n", path); }

std::string records_csv(std::span<const TrainRecord> records) {
  std::ostringstream o;
  o << "epoch,task_loss,eloss,val_metric,confidence";
  const std::size_t blocks = records.empty() ? 0 : records.front().penalties.size();
  for (std::size_t b = 0; b < blocks; ++b) o << ",penalty_" << b;
  o << '\n';
  for (const auto& r : records) {
    if (r.penalties.size() != blocks) throw DimensionError("records disagree on block count");
    o << r.epoch << ',' << format_real(r.task_loss) << ',' << format_real(r.eloss) << ','
      << format_real(r.val_metric) << ',' << format_real(r.confidence);
    for (double p : r.penalties) o << ',' << format_real(p);
    o << '\n';
  }
  return o.str();
}

void write_records_csv(std::span<const TrainRecord> records, const fs::path& path) {
  write_text(records_csv(records), path);
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double parse_real(const std::string& s, std::size_t offset) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("bad number '" + s + "' in records.csv", offset);
  }
  return v;
}

}  // namespace

std::vector<TrainRecord> read_records_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError("empty records.csv", 0);
  const auto header = split(line);
  if (header.size() < 5 || header[0] != "epoch" || header[1] != "task_loss" ||
      header[2] != "eloss" || header[3] != "val_metric" || header[4] != "confidence") {
    throw FormatError("unexpected records.csv header", 0);
  }
  for (std::size_t b = 5; b < header.size(); ++b) {
    if (header[b] != "penalty_" + std::to_string(b - 5)) {
      throw FormatError("unexpected records.csv column " + header[b], 0);
    }
  }
  offset += line.size() + 1;
  std::vector<TrainRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw FormatError("ragged records.csv row", offset);
    TrainRecord r;
    r.epoch = int(parse_real(cells[0], offset));
    r.task_loss = parse_real(cells[1], offset);
    r.eloss = parse_real(cells[2], offset);
    r.val_metric = parse_real(cells[3], offset);
    r.confidence = parse_real(cells[4], offset);
    for (std::size_t b = 5; b < cells.size(); ++b) r.penalties.push_back(parse_real(cells[b], offset));
    out.push_back(std::move(r));
    offset += line.size() + 1;
  }
  return out;
}

RunArtifacts load_run(const fs::path& dir) {
  RunArtifacts run;
  run.dir = dir;
  Json j = read_json(dir / "config.json");
  if (!j.is_object() || !j.contains("run")) {
    throw ConfigError(dir.string() + "/config.json has no run section; is this a run directory?");
  }
  run.enabled_blocks = required<int>(j["run"], "enabled_blocks");
  j.erase("run");
  run.config = config_from_json(j);
  run.spec = run.config.run_spec(run.enabled_blocks);
  const auto tensors = elft_read_all(dir / "params.bin");
  run.params = Params::from_tensors(run.spec, tensors);
  return run;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json curve_block(std::span<const TrainRecord> records, std::size_t window) {
  Json stats = Json::array();
  for (const char* metric : {"val_metric", "task_loss", "eloss", "mean_penalty"}) {
    for (auto mode : {MavpMode::verbatim, MavpMode::abs_diff}) {
      const auto cs = curve_stats(records, metric, window, mode);
      stats.push_back({{"metric", metric},
                       {"mode", to_string(mode)},
                       {"max", real_json(cs.max)},
                       {"mavp", real_json(cs.mavp)}});
    }
  }
  return stats;
}

}  // namespace

Json build_report(const fs::path& run_dir, const ReportOptions& opts) {
  const RunArtifacts run = load_run(run_dir);
  const Json saved = read_json(run_dir / "breakdown.json");
  const auto records = read_records_csv(run_dir / "records.csv");
  const auto& cfg = run.config;

  Json mask = Json::array();
  for (bool m : run.spec.mask) mask.push_back(bool(m));
  Json doc = {{"schema_version", kReportSchemaVersion},
              {"metadata",
               {{"config_hash", config_hash(cfg)},
                {"seed", run.spec.seed},
                {"enabled_blocks", run.enabled_blocks},
                {"mask", mask},
                {"epochs", records.size()},
                {"created_utc", utc_now()}}},
              {"breakdown", saved.at("breakdown")},
              {"trajectories", saved.at("trajectories")},
              {"final", saved.at("final")}};

  // Entropy trajectories as CSV and SVG.
  std::ostringstream csv;
  csv << "block,layer,entropy,drop\n";
  std::vector<PlotSeries> lines;
  for (const auto& t : saved.at("trajectories")) {
    PlotSeries s;
    const int block = t.at("block").get<int>();
    s.label = "block " + std::to_string(block);
    const auto& h = t.at("entropies");
    const auto& d = t.at("drops");
    for (std::size_t n = 0; n < h.size(); ++n) {
      const double hv = real_from_json(h[n]);
      csv << block << ',' << n << ',' << format_real(hv) << ','
          << (n == 0 ? std::string() : format_real(real_from_json(d[n - 1]))) << '\n';
      s.x.push_back(double(n));
      s.y.push_back(hv);
    }
    lines.push_back(std::move(s));
  }
  write_text(csv.str(), run_dir / "trajectories.csv");
  write_text(line_plot_svg("Per-layer entropy (validation)", "layer within block",
                           "entropy [nats]", lines),
             run_dir / "entropy.svg");

  if (fs::exists(run_dir / "band.json")) {
    const ToleranceBand band = band_from_json(read_json(run_dir / "band.json"));
    const auto expect = settings_hash(run.spec, cfg.training.estimator, cfg.training.knn,
                                      cfg.audit.batch_size);
    if (band.settings_hash != expect) {
      throw ConfigError("band.json is stale: settings hash " + band.settings_hash +
                        " does not match " + expect);
    }
    const Dataset probe = sample_task(cfg.task, std::size_t(cfg.audit.batch_size),
                                      derive_seed(cfg.task.seed, "report-probe", 0));
    doc["band"] = to_json(band);
    doc["verdict"] = to_json(audit_batch(run.spec, run.params, probe.x, band,
                                         cfg.training.estimator, cfg.training.knn));
  }

  if (opts.pca) {
    const TaskData data = generate_task(cfg.task);
    const Forward fw = forward(run.spec, run.params, data.validation.x);
    Json pcas = Json::array();
    for (std::size_t b = 0; b < fw.captures.size(); ++b) {
      for (std::size_t layer : {std::size_t(0), fw.captures[b].size() - 1}) {
        Json entry = {{"block", b}, {"layer", layer}};
        Json summary = to_json(pca2_summary(SampleMatrix(fw.captures[b][layer])));
        entry.insert(summary.begin(), summary.end());
        pcas.push_back(entry);
      }
    }
    doc["pca"] = pcas;
  }

  if (opts.curves) {
    Json curves = {{"window", opts.window}, {"stats", curve_block(records, opts.window)}};
    std::vector<PlotSeries> acc;
    PlotSeries mine{run_dir_name(run.enabled_blocks), {}, record_series(records, "val_metric")};
    for (const auto& r : records) mine.x.push_back(double(r.epoch));
    const fs::path base_dir = run_dir.parent_path() / run_dir_name(0);
    if (run.enabled_blocks != 0 && fs::exists(base_dir / "records.csv")) {
      const auto base = read_records_csv(base_dir / "records.csv");
      Json paired = Json::array();
      for (auto mode : {MavpMode::verbatim, MavpMode::abs_diff}) {
        const auto rows = paired_curve_table(records, base, "val_metric", opts.window, mode);
        paired.push_back({{"metric", "val_metric"}, {"mode", to_string(mode)}, {"rows", to_json(rows)}});
      }
      curves["baseline_run"] = run_dir_name(0);
      curves["paired"] = paired;
      PlotSeries b{run_dir_name(0), {}, record_series(base, "val_metric")};
      for (const auto& r : base) b.x.push_back(double(r.epoch));
      acc.push_back(std::move(b));
    }
    acc.push_back(std::move(mine));
    std::ostringstream cc;
    cc << "epoch,val_metric,task_loss,eloss,mean_penalty\n";
    const auto mp = record_series(records, "mean_penalty");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      cc << r.epoch << ',' << format_real(r.val_metric) << ',' << format_real(r.task_loss)
         << ',' << format_real(r.eloss) << ',' << format_real(mp[i]) << '\n';
    }
    write_text(cc.str(), run_dir / "curves.csv");
    write_text(line_plot_svg("Validation metric per epoch", "epoch", "validation metric", acc),
               run_dir / "curves.svg");
    doc["curves"] = curves;
  }

  write_json(doc, run_dir / "report.json");
  return doc;
}

}  // namespace eloss
