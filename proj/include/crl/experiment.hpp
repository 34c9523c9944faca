#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crl/benchmark.hpp"
#include "crl/distillation.hpp"
#include "crl/eval.hpp"
#include "crl/network.hpp"
#include "crl/trainer.hpp"

namespace crl {

/// Name of the joint-training row in method lists and tables.
inline constexpr const char* kUpperBound = "upper-bound";

/// Candidate grids for validation-based selection. K = 0 means all old classes;
/// a one-element list pins the value.
struct SelectionGrid {
  std::vector<double> lambdas{0.01, 0.1, 1.0, 10.0};
  std::vector<std::size_t> neighborhoods{0, 20, 200, 500, 1000};
  std::vector<double> betas{0.0, 0.002, 0.005, 0.01, 0.05};
};

/// One experiment grid: benchmark source, methods, per-method distillation
/// settings, schedule, network and seeds.
struct ExperimentConfig {
  std::optional<std::filesystem::path> benchmark_path;
  GeneratorParams generator;
  std::uint64_t benchmark_seed = 0;
  std::vector<std::string> methods{"finetune"};
  DistillConfig distill;  // method field ignored; see distill_for
  std::map<std::string, DistillConfig> overrides;
  TrainSchedule schedule;
  NetworkShape network;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "crl-out";
  std::size_t jobs = 1;
  bool save_checkpoints = false;
  SelectionGrid selection;

  void validate() const;
  /// Distillation settings for one method name ("upper-bound" maps to finetune).
  DistillConfig distill_for(const std::string& method) const;
};

/// Parses a JSON config; unknown keys and type mismatches raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Effective config with every default filled in, stable key order.
std::string effective_config_json(const ExperimentConfig& cfg);

/// Short hex digest of the effective settings of one method.
std::string config_digest(const ExperimentConfig& cfg, const std::string& method);

/// Loads the configured benchmark or generates it in memory.
Benchmark resolve_benchmark(const ExperimentConfig& cfg);

/// Final reports of one (method, seed) cell.
struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<EvalReport> reports;
  std::vector<ModelState> models;
  std::optional<std::string> error;
  int error_code = 0;
};

/// Which identities a grid is scored on. Validation reports carry retrieval
/// metrics only (verification_accuracy stays 0).
enum class EvalTarget { test, validation };

/// Runs every (method, seed) cell; failures are captured per cell. Results are
/// ordered by method (config order) then seed.
std::vector<CellResult> run_grid(const ExperimentConfig& cfg, const Benchmark& benchmark,
                                 const std::vector<std::pair<std::string, DistillConfig>>& cells_methods,
                                 bool keep_models = false, EvalTarget target = EvalTarget::test);

struct Aggregate {
  double mean = 0.0;
  std::optional<double> std;  // sample std (n - 1), absent for one value
};

Aggregate aggregate(const std::vector<double>& values);

/// Formats a double with the shortest representation that parses back to the same bits.
std::string format_double(double v);

struct CommandOutcome {
  int exit_code = 0;
  std::vector<std::string> files;
  std::string summary;  // human-readable table
};

CommandOutcome cmd_generate(const GeneratorParams& params, std::uint64_t seed, const std::filesystem::path& out);
CommandOutcome cmd_run(const ExperimentConfig& cfg);

enum class SweepAxis { neighborhood, beta };
SweepAxis parse_sweep_axis(const std::string& name);

/// One sweep value; `all` selects every old class for K sweeps.
struct SweepValue {
  double value = 0.0;
  bool all = false;
};

CommandOutcome cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<SweepValue>& values);
CommandOutcome cmd_probe_old(const ExperimentConfig& cfg);

struct SelectionTrial {
  std::string method;
  std::string axis;  // lambda_old, neighborhood_size or margin_beta
  double value = 0.0;
  double validation_top1 = 0.0;  // final step, mean over seeds
  double validation_map = 0.0;   // selection score
  bool chosen = false;
};

struct Selection {
  std::map<std::string, DistillConfig> chosen;  // per distilling method
  std::vector<SelectionTrial> trials;
};

/// Picks lambda_old, then K (neighborhood methods), then beta (relaxed methods)
/// for every distilling method in the config by final-step validation mAP
/// (mean over the config seeds). Ties keep the earlier candidate.
Selection select_hyperparameters(const ExperimentConfig& cfg, const Benchmark& benchmark);

/// Writes selection.csv and selected_overrides.json (an "overrides" block).
CommandOutcome cmd_select(const ExperimentConfig& cfg);

/// Exit code for an exception thrown by the toolkit (0 never).
int exit_code_for(const std::exception& e);

}  // namespace crl
