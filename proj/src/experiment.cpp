#include "crl/experiment.hpp"

#include <zlib.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>
#include <type_traits>

#include <json.hpp>

#include "crl/checkpoint.hpp"
#include "crl/error.hpp"

namespace crl {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!j.at(key).is_number_unsigned()) {
      throw ConfigError("'" + std::string(key) + "' in " + where + " must be a non-negative integer");
    }
  }
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad type for '" + std::string(key) + "' in " + where);
  }
}

void read_generator(const json& j, GeneratorParams& p) {
  const std::string where = "benchmark.params";
  check_keys(j,
             {"train_identities", "test_identities", "images_per_identity", "feature_dim", "camera_count", "steps",
              "image_noise", "camera_noise", "validation_fraction", "probe_fraction", "query_fraction",
              "verification_pairs"},
             where);
  read_into(j, "train_identities", p.train_identities, where);
  read_into(j, "test_identities", p.test_identities, where);
  read_into(j, "images_per_identity", p.images_per_identity, where);
  read_into(j, "feature_dim", p.feature_dim, where);
  read_into(j, "camera_count", p.camera_count, where);
  read_into(j, "steps", p.steps, where);
  read_into(j, "image_noise", p.image_noise, where);
  read_into(j, "camera_noise", p.camera_noise, where);
  read_into(j, "validation_fraction", p.validation_fraction, where);
  read_into(j, "probe_fraction", p.probe_fraction, where);
  read_into(j, "query_fraction", p.query_fraction, where);
  read_into(j, "verification_pairs", p.verification_pairs, where);
}

json generator_json(const GeneratorParams& p) {
  return json{{"train_identities", p.train_identities},
              {"test_identities", p.test_identities},
              {"images_per_identity", p.images_per_identity},
              {"feature_dim", p.feature_dim},
              {"camera_count", p.camera_count},
              {"steps", p.steps},
              {"image_noise", p.image_noise},
              {"camera_noise", p.camera_noise},
              {"validation_fraction", p.validation_fraction},
              {"probe_fraction", p.probe_fraction},
              {"query_fraction", p.query_fraction},
              {"verification_pairs", p.verification_pairs}};
}

void read_distill(const json& j, DistillConfig& d, const std::string& where) {
  check_keys(j, {"temperature", "neighborhood_size", "margin_beta", "lambda_old", "lfl_weight"}, where);
  read_into(j, "temperature", d.temperature, where);
  read_into(j, "neighborhood_size", d.neighborhood_size, where);
  read_into(j, "margin_beta", d.margin_beta, where);
  read_into(j, "lambda_old", d.lambda_old, where);
  read_into(j, "lfl_weight", d.lfl_weight, where);
}

json distill_json(const DistillConfig& d) {
  return json{{"temperature", d.temperature},
              {"neighborhood_size", d.neighborhood_size},
              {"margin_beta", d.margin_beta},
              {"lambda_old", d.lambda_old},
              {"lfl_weight", d.lfl_weight}};
}

void read_schedule(const json& j, TrainSchedule& s) {
  const std::string where = "schedule";
  check_keys(j,
             {"epochs", "batch_size", "milestones", "identity_balanced", "identities_per_batch",
              "images_per_identity", "optimizer"},
             where);
  read_into(j, "epochs", s.epochs, where);
  read_into(j, "batch_size", s.batch_size, where);
  read_into(j, "identity_balanced", s.identity_balanced, where);
  read_into(j, "identities_per_batch", s.identities_per_batch, where);
  read_into(j, "images_per_identity", s.images_per_identity, where);
  if (j.contains("milestones")) {
    s.milestones.clear();
    for (const auto& m : j.at("milestones")) {
      if (!m.is_array() || m.size() != 2 || !m[0].is_number_unsigned() || !m[1].is_number()) {
        throw ConfigError("schedule.milestones entries must be [epoch, factor]");
      }
      s.milestones.push_back({m[0].get<std::size_t>(), m[1].get<double>()});
    }
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    const std::string ow = "schedule.optimizer";
    check_keys(o, {"kind", "learning_rate", "momentum", "beta1", "beta2", "epsilon"}, ow);
    if (o.contains("kind")) {
      if (!o.at("kind").is_string()) throw ConfigError("schedule.optimizer.kind must be a string");
      s.optimizer.kind = parse_optimizer_kind(o.at("kind").get<std::string>());
    }
    read_into(o, "learning_rate", s.optimizer.learning_rate, ow);
    read_into(o, "momentum", s.optimizer.momentum, ow);
    read_into(o, "beta1", s.optimizer.beta1, ow);
    read_into(o, "beta2", s.optimizer.beta2, ow);
    read_into(o, "epsilon", s.optimizer.epsilon, ow);
  }
}

json schedule_json(const TrainSchedule& s) {
  json milestones = json::array();
  for (const auto& m : s.milestones) milestones.push_back({m.epoch, m.factor});
  return json{{"epochs", s.epochs},
              {"batch_size", s.batch_size},
              {"milestones", milestones},
              {"identity_balanced", s.identity_balanced},
              {"identities_per_batch", s.identities_per_batch},
              {"images_per_identity", s.images_per_identity},
              {"optimizer",
               {{"kind", to_string(s.optimizer.kind)},
                {"learning_rate", s.optimizer.learning_rate},
                {"momentum", s.optimizer.momentum},
                {"beta1", s.optimizer.beta1},
                {"beta2", s.optimizer.beta2},
                {"epsilon", s.optimizer.epsilon}}}};
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

std::uint32_t crc_of(const std::string& s) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()),
                                          static_cast<uInt>(s.size())));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& path) : out_(path, std::ios::app) {}
  void line(const std::string& msg) {
    if (out_) out_ << timestamp() << ' ' << msg << '\n';
  }

 private:
  std::ofstream out_;
};

std::string opt_std(const Aggregate& a) { return a.std ? format_double(*a.std) : std::string(); }

json report_json(const std::string& method, const EvalReport& r) {
  json folds = json::array(), thresholds = json::array();
  for (double v : r.fold_accuracies) folds.push_back(v);
  for (double v : r.fold_thresholds) thresholds.push_back(v);
  return json{{"method", method},
              {"seed", r.seed},
              {"step", r.step},
              {"top1", r.top1},
              {"mAP", r.mean_ap},
              {"verification_accuracy", r.verification_accuracy},
              {"fold_accuracies", folds},
              {"fold_thresholds", thresholds},
              {"config_digest", r.config_digest}};
}

std::vector<std::pair<std::string, DistillConfig>> method_cells(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, DistillConfig>> out;
  for (const auto& m : cfg.methods) out.emplace_back(m, cfg.distill_for(m));
  return out;
}

void record_failures(const std::vector<CellResult>& cells, const std::filesystem::path& dir, CommandOutcome& outcome,
                     RunLog& log) {
  std::ostringstream fails;
  bool any = false;
  fails << "method,seed,exit_code,error\n";
  for (const auto& c : cells) {
    if (!c.error) continue;
    any = true;
    std::string msg = *c.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    fails << c.method << ',' << c.seed << ',' << c.error_code << ',' << msg << '\n';
    log.line("cell failed: method=" + c.method + " seed=" + std::to_string(c.seed) + ": " + *c.error);
    if (outcome.exit_code == 0) outcome.exit_code = c.error_code;
  }
  if (any) {
    write_text(dir / "failures.csv", fails.str());
    outcome.files.push_back((dir / "failures.csv").string());
  }
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

std::string pct(const Aggregate& a) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * a.mean;
  if (a.std) os << " +- " << std::setprecision(2) << 100.0 * *a.std;
  return os.str();
}

void prepare_output(const ExperimentConfig& cfg, CommandOutcome& outcome) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw DataError("cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());
  const auto path = cfg.output_dir / "effective_config.json";
  write_text(path, effective_config_json(cfg));
  outcome.files.push_back(path.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("methods must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  for (const auto& m : methods) {
    if (m != kUpperBound) parse_method(m);
  }
  for (const auto& [name, d] : overrides) {
    if (name != kUpperBound) parse_method(name);
    d.validate();
  }
  if (benchmark_path && !std::filesystem::exists(*benchmark_path / "manifest.json")) {
    throw ConfigError("benchmark path " + benchmark_path->string() + " has no manifest.json");
  }
  if (!benchmark_path) generator.validate();
  if (jobs == 0) throw ConfigError("jobs must be >= 1");
  distill.validate();
  schedule.validate();
  network.validate();
  if (selection.lambdas.empty() || selection.neighborhoods.empty() || selection.betas.empty()) {
    throw ConfigError("selection grids must not be empty");
  }
  for (double v : selection.lambdas) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("selection.lambda_old values must be >= 0");
  }
  for (double v : selection.betas) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("selection.margin_beta values must be >= 0");
  }
}

DistillConfig ExperimentConfig::distill_for(const std::string& method) const {
  auto it = overrides.find(method);
  DistillConfig d = it == overrides.end() ? distill : it->second;
  d.method = method == kUpperBound ? Method::finetune : parse_method(method);
  return d;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"benchmark", "methods", "distill", "overrides", "schedule", "network", "seeds", "output_dir", "jobs",
              "save_checkpoints", "selection"},
             "config");
  ExperimentConfig cfg;
  if (j.contains("benchmark")) {
    const auto& b = j.at("benchmark");
    check_keys(b, {"path", "seed", "params"}, "benchmark");
    if (b.contains("path")) {
      if (!b.at("path").is_string()) throw ConfigError("benchmark.path must be a string");
      cfg.benchmark_path = b.at("path").get<std::string>();
    }
    read_into(b, "seed", cfg.benchmark_seed, "benchmark");
    if (b.contains("params")) read_generator(b.at("params"), cfg.generator);
  }
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j.at("methods")) {
      if (!m.is_string()) throw ConfigError("methods must be strings");
      cfg.methods.push_back(m.get<std::string>());
    }
  }
  if (j.contains("distill")) read_distill(j.at("distill"), cfg.distill, "distill");
  if (j.contains("overrides")) {
    const auto& o = j.at("overrides");
    if (!o.is_object()) throw ConfigError("overrides must be an object");
    for (const auto& [name, value] : o.items()) {
      DistillConfig d = cfg.distill;
      read_distill(value, d, "overrides." + name);
      cfg.overrides[name] = d;
    }
  }
  if (j.contains("schedule")) read_schedule(j.at("schedule"), cfg.schedule);
  if (j.contains("network")) {
    const auto& n = j.at("network");
    check_keys(n, {"hidden", "embed_dim"}, "network");
    read_into(n, "hidden", cfg.network.hidden, "network");
    read_into(n, "embed_dim", cfg.network.embed_dim, "network");
  }
  read_into(j, "seeds", cfg.seeds, "config");
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string()) throw ConfigError("output_dir must be a string");
    cfg.output_dir = j.at("output_dir").get<std::string>();
  }
  read_into(j, "jobs", cfg.jobs, "config");
  read_into(j, "save_checkpoints", cfg.save_checkpoints, "config");
  if (j.contains("selection")) {
    const auto& g = j.at("selection");
    check_keys(g, {"lambda_old", "neighborhood_size", "margin_beta"}, "selection");
    read_into(g, "lambda_old", cfg.selection.lambdas, "selection");
    read_into(g, "neighborhood_size", cfg.selection.neighborhoods, "selection");
    read_into(g, "margin_beta", cfg.selection.betas, "selection");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_experiment_config(os.str());
}

std::string effective_config_json(const ExperimentConfig& cfg) {
  json j;
  json b;
  if (cfg.benchmark_path) b["path"] = cfg.benchmark_path->string();
  b["seed"] = cfg.benchmark_seed;
  b["params"] = generator_json(cfg.generator);
  j["benchmark"] = b;
  j["methods"] = cfg.methods;
  j["distill"] = distill_json(cfg.distill);
  json o = json::object();
  for (const auto& [name, d] : cfg.overrides) o[name] = distill_json(d);
  j["overrides"] = o;
  j["schedule"] = schedule_json(cfg.schedule);
  j["network"] = {{"hidden", cfg.network.hidden}, {"embed_dim", cfg.network.embed_dim}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir.string();
  j["jobs"] = cfg.jobs;
  j["save_checkpoints"] = cfg.save_checkpoints;
  j["selection"] = {{"lambda_old", cfg.selection.lambdas},
                    {"neighborhood_size", cfg.selection.neighborhoods},
                    {"margin_beta", cfg.selection.betas}};
  return j.dump(2) + "\n";
}

std::string config_digest(const ExperimentConfig& cfg, const std::string& method) {
  json j{{"method", method},
         {"distill", distill_json(cfg.distill_for(method))},
         {"schedule", schedule_json(cfg.schedule)},
         {"network", {{"hidden", cfg.network.hidden}, {"embed_dim", cfg.network.embed_dim}}}};
  return hex32(crc_of(j.dump()));
}

Benchmark resolve_benchmark(const ExperimentConfig& cfg) {
  return cfg.benchmark_path ? load_benchmark(*cfg.benchmark_path) : generate(cfg.generator, cfg.benchmark_seed);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  if (dynamic_cast<const Error*>(&e)) return 3;
  return 1;
}

std::vector<CellResult> run_grid(const ExperimentConfig& cfg, const Benchmark& benchmark,
                                 const std::vector<std::pair<std::string, DistillConfig>>& cells_methods,
                                 bool keep_models, EvalTarget target) {
  NetworkShape shape = cfg.network;
  shape.input_dim = benchmark.params.feature_dim;
  struct Task {
    std::size_t method_index;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t m = 0; m < cells_methods.size(); ++m) {
    for (auto seed : cfg.seeds) tasks.push_back({m, seed});
  }
  std::vector<CellResult> results(tasks.size());
  const BenchmarkTrainingData data(benchmark);

  auto run_task = [&](std::size_t i) {
    const auto& [name, distill] = cells_methods[tasks[i].method_index];
    CellResult& cell = results[i];
    cell.method = name;
    cell.seed = tasks[i].seed;
    const std::string digest = config_digest(cfg, name);
    Evaluator evaluator = [&](const ModelState& model, std::size_t step) {
      if (target == EvalTarget::test) return evaluate(model, benchmark, step, cell.seed, digest);
      const RetrievalMetrics v = evaluate_validation(model, benchmark);
      EvalReport r;
      r.step = step;
      r.top1 = v.top1;
      r.mean_ap = v.mean_ap;
      r.seed = cell.seed;
      r.config_digest = digest;
      return r;
    };
    try {
      const RunMode mode = name == kUpperBound ? RunMode::joint : RunMode::continual;
      auto outcomes = run_continual(data, evaluator, distill, cfg.schedule, shape, mode, cell.seed);
      for (auto& o : outcomes) {
        cell.reports.push_back(o.report);
        if (keep_models) cell.models.push_back(std::move(o.model));
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
      cell.error_code = exit_code_for(e);
    }
  };

  const std::size_t workers = std::min<std::size_t>(cfg.jobs, std::max<std::size_t>(1, tasks.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) run_task(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  return results;
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CommandOutcome cmd_generate(const GeneratorParams& params, std::uint64_t seed, const std::filesystem::path& out) {
  const Benchmark b = generate(params, seed);
  save_benchmark(b, out);
  CommandOutcome outcome;
  outcome.files = {(out / "manifest.json").string(), (out / "features.bin").string(), (out / "index.csv").string(),
                   (out / "pairs.csv").string()};
  std::ostringstream os;
  os << "benchmark written to " << out.string() << "\n"
     << "  steps: " << b.step_count() << ", trained classes: " << b.class_count()
     << ", test identities: " << b.test_identities().size() << ", samples: " << b.samples.size()
     << ", verification pairs: " << b.pairs.size() << "\n"
     << "  checksum: " << hex32(benchmark_checksum(b)) << "\n";
  outcome.summary = os.str();
  return outcome;
}

CommandOutcome cmd_run(const ExperimentConfig& cfg) {
  cfg.validate();
  CommandOutcome outcome;
  prepare_output(cfg, outcome);
  RunLog log(cfg.output_dir / "run.log");
  log.line("run started");
  const Benchmark benchmark = resolve_benchmark(cfg);
  const bool keep = cfg.save_checkpoints;
  const auto cells = run_grid(cfg, benchmark, method_cells(cfg), keep);
  record_failures(cells, cfg.output_dir, outcome, log);

  std::ostringstream reports, series, summary;
  json all = json::array();
  reports << "method,seed,step,top1,mAP,verification_accuracy,config_digest\n";
  for (const auto& c : cells) {
    for (const auto& r : c.reports) {
      reports << c.method << ',' << c.seed << ',' << r.step << ',' << format_double(r.top1) << ','
              << format_double(r.mean_ap) << ',' << format_double(r.verification_accuracy) << ',' << r.config_digest
              << '\n';
      all.push_back(report_json(c.method, r));
    }
    if (keep && !c.error) {
      const auto dir = cfg.output_dir / "checkpoints";
      std::filesystem::create_directories(dir);
      for (std::size_t k = 0; k < c.models.size(); ++k) {
        const auto path = dir / (c.method + "-seed" + std::to_string(c.seed) + "-step" +
                                 std::to_string(c.reports[k].step) + ".crlm");
        json side{{"method", c.method},
                  {"seed", c.seed},
                  {"step", c.reports[k].step},
                  {"config", json::parse(effective_config_json(cfg))}};
        save_checkpoint(c.models[k], path, side.dump(2));
        outcome.files.push_back(path.string());
      }
    }
  }

  series << "method,step,metric,mean,std\n";
  summary << "method,top1_mean,top1_std,mAP_mean,mAP_std,verification_mean,verification_std\n";
  std::ostringstream table;
  table << pad("method", 14) << pad("top1 (%)", 18) << pad("mAP (%)", 18) << "verification (%)\n";
  for (const auto& method : cfg.methods) {
    std::map<std::size_t, std::vector<const EvalReport*>> by_step;
    for (const auto& c : cells) {
      if (c.method != method || c.error) continue;
      for (const auto& r : c.reports) by_step[r.step].push_back(&r);
    }
    if (by_step.empty()) continue;
    auto collect = [](const std::vector<const EvalReport*>& rs, double EvalReport::*field) {
      std::vector<double> v;
      for (const auto* r : rs) v.push_back(r->*field);
      return aggregate(v);
    };
    for (const auto& [step, rs] : by_step) {
      for (auto [name, field] : {std::pair{"top1", &EvalReport::top1}, std::pair{"mAP", &EvalReport::mean_ap},
                                 std::pair{"verification_accuracy", &EvalReport::verification_accuracy}}) {
        const Aggregate a = collect(rs, field);
        series << method << ',' << step << ',' << name << ',' << format_double(a.mean) << ',' << opt_std(a) << '\n';
      }
    }
    const auto& final_reports = by_step.rbegin()->second;
    const Aggregate t = collect(final_reports, &EvalReport::top1);
    const Aggregate m = collect(final_reports, &EvalReport::mean_ap);
    const Aggregate v = collect(final_reports, &EvalReport::verification_accuracy);
    summary << method << ',' << format_double(t.mean) << ',' << opt_std(t) << ',' << format_double(m.mean) << ','
            << opt_std(m) << ',' << format_double(v.mean) << ',' << opt_std(v) << '\n';
    table << pad(method, 14) << pad(pct(t), 18) << pad(pct(m), 18) << pct(v) << '\n';
  }

  const auto dir = cfg.output_dir;
  write_text(dir / "reports.csv", reports.str());
  write_text(dir / "reports.json", all.dump(2) + "\n");
  write_text(dir / "series.csv", series.str());
  write_text(dir / "summary.csv", summary.str());
  for (const char* f : {"reports.csv", "reports.json", "series.csv", "summary.csv"}) {
    outcome.files.push_back((dir / f).string());
  }
  outcome.summary = table.str();
  log.line("run finished");
  return outcome;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "K" || name == "k" || name == "neighborhood") return SweepAxis::neighborhood;
  if (name == "beta") return SweepAxis::beta;
  throw ConfigError("unknown sweep axis '" + name + "' (expected K or beta)");
}

CommandOutcome cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<SweepValue>& values) {
  cfg.validate();
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (const auto& v : values) {
    if (!(v.value >= 0.0) || !std::isfinite(v.value)) throw ConfigError("sweep values must be finite and >= 0");
    if (axis == SweepAxis::neighborhood && !v.all && v.value != std::floor(v.value)) {
      throw ConfigError("K sweep values must be integers");
    }
    if (axis == SweepAxis::beta && v.all) throw ConfigError("'all' is only valid for K sweeps");
  }
  CommandOutcome outcome;
  prepare_output(cfg, outcome);
  RunLog log(cfg.output_dir / "run.log");
  log.line("sweep started");
  const Benchmark benchmark = resolve_benchmark(cfg);
  const std::size_t max_old = benchmark.class_count() - benchmark.step_ranges.back().size();

  const std::string method = axis == SweepAxis::neighborhood ? "fkd_ns" : "fkd_ns_cr";
  const std::string axis_name = axis == SweepAxis::neighborhood ? "K" : "beta";
  std::vector<std::pair<std::string, DistillConfig>> cells;
  std::vector<std::string> labels, notes;
  for (const auto& v : values) {
    DistillConfig d = cfg.distill_for(method);
    std::string label, note;
    if (axis == SweepAxis::neighborhood) {
      const auto k = static_cast<std::size_t>(v.value);
      label = v.all ? "all" : std::to_string(k);
      d.neighborhood_size = v.all ? 0 : k;
      if (v.all || k == 0) {
        note = "all " + std::to_string(max_old) + " old classes";
      } else if (k >= max_old) {
        note = "clamped: fewer old classes than K; all " + std::to_string(max_old) + " used";
      }
    } else {
      label = format_double(v.value);
      d.margin_beta = v.value;
    }
    cells.emplace_back(method, d);
    labels.push_back(label);
    notes.push_back(note);
  }
  const auto results = run_grid(cfg, benchmark, cells);
  record_failures(results, cfg.output_dir, outcome, log);

  std::ostringstream raw, table_csv, table;
  raw << "axis,value,seed,top1,mAP,verification_accuracy\n";
  table_csv << "axis,value,top1_mean,top1_std,mAP_mean,mAP_std,verification_mean,verification_std,best,note\n";
  std::vector<Aggregate> top1s, maps, verifs;
  const std::size_t seeds = cfg.seeds.size();
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    std::vector<double> t, m, ver;
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto& cell = results[vi * seeds + s];
      if (cell.error || cell.reports.empty()) continue;
      const EvalReport& r = cell.reports.back();
      raw << axis_name << ',' << labels[vi] << ',' << cell.seed << ',' << format_double(r.top1) << ','
          << format_double(r.mean_ap) << ',' << format_double(r.verification_accuracy) << '\n';
      t.push_back(r.top1);
      m.push_back(r.mean_ap);
      ver.push_back(r.verification_accuracy);
    }
    top1s.push_back(aggregate(t));
    maps.push_back(aggregate(m));
    verifs.push_back(aggregate(ver));
  }
  std::size_t best = 0;
  for (std::size_t vi = 1; vi < values.size(); ++vi) {
    if (top1s[vi].mean > top1s[best].mean) best = vi;
  }
  table << pad(axis_name, 8) << pad("top1 (%)", 18) << pad("mAP (%)", 18) << "note\n";
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    table_csv << axis_name << ',' << labels[vi] << ',' << format_double(top1s[vi].mean) << ',' << opt_std(top1s[vi])
              << ',' << format_double(maps[vi].mean) << ',' << opt_std(maps[vi]) << ','
              << format_double(verifs[vi].mean) << ',' << opt_std(verifs[vi]) << ',' << (vi == best ? 1 : 0) << ','
              << notes[vi] << '\n';
    table << pad(labels[vi] + (vi == best ? "*" : ""), 8) << pad(pct(top1s[vi]), 18) << pad(pct(maps[vi]), 18)
          << notes[vi] << '\n';
  }
  write_text(cfg.output_dir / "sweep_raw.csv", raw.str());
  write_text(cfg.output_dir / "sweep.csv", table_csv.str());
  outcome.files.push_back((cfg.output_dir / "sweep_raw.csv").string());
  outcome.files.push_back((cfg.output_dir / "sweep.csv").string());
  outcome.summary = table.str();
  log.line("sweep finished");
  return outcome;
}

CommandOutcome cmd_probe_old(const ExperimentConfig& cfg) {
  cfg.validate();
  CommandOutcome outcome;
  prepare_output(cfg, outcome);
  RunLog log(cfg.output_dir / "run.log");
  log.line("probe-old started");
  const Benchmark benchmark = resolve_benchmark(cfg);
  const auto probe = benchmark.with_role(Role::probe_old);
  if (probe.empty()) throw DataError("benchmark has no probe_old samples (probe_fraction is 0)");

  std::vector<std::pair<std::string, DistillConfig>> cells;
  for (const auto& m : cfg.methods) {
    if (m != kUpperBound) cells.emplace_back(m, cfg.distill_for(m));
  }
  if (cells.empty()) throw ConfigError("probe-old needs at least one continual method");
  const auto results = run_grid(cfg, benchmark, cells, true);
  record_failures(results, cfg.output_dir, outcome, log);

  const std::size_t steps = benchmark.step_count();
  std::ostringstream raw, table_csv, table;
  raw << "method,probe,seed,step,accuracy\n";
  table_csv << "method,probe";
  table << pad("method", 14) << pad("probe", 12);
  for (std::size_t t = 0; t < steps; ++t) {
    table_csv << ",step" << t;
    table << pad("Step" + std::to_string(t), 10);
  }
  table_csv << '\n';
  table << '\n';
  for (const auto& [name, d] : cells) {
    for (const char* kind : {"classifier", "embedding"}) {
      const bool by_classifier = std::string(kind) == "classifier";
      std::vector<std::vector<double>> per_step(steps);
      for (const auto& c : results) {
        if (c.method != name || c.error) continue;
        const auto acc = by_classifier ? old_class_probe(c.models, probe, benchmark.step_ranges.front())
                                       : old_class_retrieval(c.models, probe);
        for (std::size_t t = 0; t < acc.size(); ++t) {
          raw << name << ',' << kind << ',' << c.seed << ',' << t << ',' << format_double(acc[t]) << '\n';
          per_step[t].push_back(acc[t]);
        }
      }
      table_csv << name << ',' << kind;
      table << pad(name, 14) << pad(kind, 12);
      for (std::size_t t = 0; t < steps; ++t) {
        const Aggregate a = aggregate(per_step[t]);
        table_csv << ',' << format_double(a.mean);
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << 100.0 * a.mean;
        table << pad(cell.str(), 10);
      }
      table_csv << '\n';
      table << '\n';
    }
  }
  write_text(cfg.output_dir / "probe_old_raw.csv", raw.str());
  write_text(cfg.output_dir / "probe_old.csv", table_csv.str());
  outcome.files.push_back((cfg.output_dir / "probe_old_raw.csv").string());
  outcome.files.push_back((cfg.output_dir / "probe_old.csv").string());
  outcome.summary = table.str();
  log.line("probe-old finished");
  return outcome;
}

Selection select_hyperparameters(const ExperimentConfig& cfg, const Benchmark& benchmark) {
  cfg.validate();
  const SelectionGrid& grid = cfg.selection;
  Selection out;
  for (const auto& name : cfg.methods) {
    if (name == kUpperBound) continue;
    DistillConfig best = cfg.distill_for(name);
    if (best.method == Method::scratch || best.method == Method::finetune) continue;

    auto sweep = [&](const std::string& axis, const std::vector<double>& values, auto apply) {
      std::vector<std::pair<std::string, DistillConfig>> cells;
      for (double v : values) {
        DistillConfig d = best;
        apply(d, v);
        cells.emplace_back(name, d);
      }
      const auto results = run_grid(cfg, benchmark, cells, false, EvalTarget::validation);
      const std::size_t seeds = cfg.seeds.size();
      std::size_t first = out.trials.size();
      std::optional<std::size_t> winner;
      for (std::size_t vi = 0; vi < values.size(); ++vi) {
        std::vector<double> top1s, maps;
        for (std::size_t s = 0; s < seeds; ++s) {
          const auto& cell = results[vi * seeds + s];
          if (cell.error) throw NumericalError("selection run failed for " + name + " " + axis + "=" +
                                               format_double(values[vi]) + ": " + *cell.error);
          top1s.push_back(cell.reports.back().top1);
          maps.push_back(cell.reports.back().mean_ap);
        }
        const double score = aggregate(maps).mean;
        out.trials.push_back({name, axis, values[vi], aggregate(top1s).mean, score, false});
        if (!winner || score > out.trials[first + *winner].validation_map) winner = vi;
      }
      out.trials[first + *winner].chosen = true;
      apply(best, values[*winner]);
    };

    sweep("lambda_old", grid.lambdas, [](DistillConfig& d, double v) { d.lambda_old = v; });
    if (best.selects_neighborhood()) {
      std::vector<double> ks(grid.neighborhoods.begin(), grid.neighborhoods.end());
      sweep("neighborhood_size", ks,
            [](DistillConfig& d, double v) { d.neighborhood_size = static_cast<std::size_t>(v); });
    }
    if (best.relaxes_consistency()) {
      sweep("margin_beta", grid.betas, [](DistillConfig& d, double v) { d.margin_beta = v; });
    }
    out.chosen[name] = best;
  }
  return out;
}

CommandOutcome cmd_select(const ExperimentConfig& cfg) {
  cfg.validate();
  CommandOutcome outcome;
  prepare_output(cfg, outcome);
  RunLog log(cfg.output_dir / "run.log");
  log.line("select started");
  const Benchmark benchmark = resolve_benchmark(cfg);
  const Selection sel = select_hyperparameters(cfg, benchmark);

  std::ostringstream csv, table;
  csv << "method,axis,value,validation_top1,validation_mAP,chosen\n";
  table << pad("method", 14) << pad("axis", 20) << pad("value", 10) << pad("val top1 (%)", 14) << "val mAP (%)\n";
  for (const auto& t : sel.trials) {
    csv << t.method << ',' << t.axis << ',' << format_double(t.value) << ',' << format_double(t.validation_top1)
        << ',' << format_double(t.validation_map) << ',' << (t.chosen ? 1 : 0) << '\n';
    std::ostringstream v, m;
    v << std::fixed << std::setprecision(2) << 100.0 * t.validation_top1;
    m << std::fixed << std::setprecision(2) << 100.0 * t.validation_map;
    table << pad(t.method, 14) << pad(t.axis, 20) << pad(format_double(t.value) + (t.chosen ? "*" : ""), 10)
          << pad(v.str(), 14) << m.str() << '\n';
  }
  json overrides = json::object();
  for (const auto& [name, d] : sel.chosen) overrides[name] = distill_json(d);
  write_text(cfg.output_dir / "selection.csv", csv.str());
  write_text(cfg.output_dir / "selected_overrides.json", json{{"overrides", overrides}}.dump(2) + "\n");
  outcome.files.push_back((cfg.output_dir / "selection.csv").string());
  outcome.files.push_back((cfg.output_dir / "selected_overrides.json").string());
  outcome.summary = table.str();
  log.line("select finished");
  return outcome;
}

}  // namespace crl
