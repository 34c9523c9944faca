// Command-line experiment runner: generate / run / sweep / probe-old / select.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crl/error.hpp"
#include "crl/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)");
  cmd->add_option("--seeds,--seed", f.seeds, "training seeds (override config)");
  cmd->add_option("--out", f.out, "output directory (override config)");
  cmd->add_option("--steps", f.steps, "learning steps of a generated benchmark")->check(CLI::IsMember({5, 10}));
  cmd->add_option("--jobs", f.jobs, "parallel (method, seed) cells");
}

crl::ExperimentConfig resolve_config(const CommonFlags& f) {
  crl::ExperimentConfig cfg = f.config.empty() ? crl::ExperimentConfig{} : crl::load_experiment_config(f.config);
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.jobs) cfg.jobs = *f.jobs;
  if (f.steps) {
    if (cfg.benchmark_path) throw crl::ConfigError("--steps only applies to generated benchmarks");
    cfg.generator.steps = *f.steps;
  }
  return cfg;
}

std::vector<crl::SweepValue> parse_values(const std::string& text) {
  std::vector<crl::SweepValue> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      out.push_back({0.0, true});
      continue;
    }
    try {
      std::size_t pos = 0;
      const double v = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back({v, false});
    } catch (const std::exception&) {
      throw crl::ConfigError("bad sweep value '" + item + "'");
    }
  }
  return out;
}

void report(const crl::CommandOutcome& outcome) {
  std::cout << outcome.summary;
  for (const auto& f : outcome.files) std::cout << "wrote " << f << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual representation learning experiments with flexible knowledge distillation"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags, sweep_flags, probe_flags, select_flags;
  std::uint64_t gen_seed = 0;

  auto* gen = app.add_subcommand("generate", "generate a synthetic benchmark");
  add_common(gen, gen_flags);
  gen->add_option("--benchmark-seed", gen_seed, "generator seed (default: first --seed or 0)");

  auto* run = app.add_subcommand("run", "train and evaluate every (method, seed) cell");
  add_common(run, run_flags);

  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep over K or beta");
  add_common(sweep, sweep_flags);
  std::string axis = "K";
  std::string values;
  sweep->add_option("--axis", axis, "K or beta")->required();
  sweep->add_option("--values", values, "comma-separated values; 'all' selects every old class")->required();

  auto* probe = app.add_subcommand("probe-old", "accuracy on step-0 classes after every step");
  add_common(probe, probe_flags);

  auto* select = app.add_subcommand("select", "pick lambda, K and beta per method on validation identities");
  add_common(select, select_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      crl::ExperimentConfig cfg = resolve_config(gen_flags);
      if (gen_flags.out.empty()) throw crl::ConfigError("generate needs --out");
      std::uint64_t seed = gen_seed;
      if (gen->count("--benchmark-seed") == 0) seed = gen_flags.seeds.empty() ? cfg.benchmark_seed : gen_flags.seeds.front();
      report(crl::cmd_generate(cfg.generator, seed, gen_flags.out));
      return 0;
    }
    if (*run) {
      const auto outcome = crl::cmd_run(resolve_config(run_flags));
      report(outcome);
      return outcome.exit_code;
    }
    if (*sweep) {
      const auto outcome =
          crl::cmd_sweep(resolve_config(sweep_flags), crl::parse_sweep_axis(axis), parse_values(values));
      report(outcome);
      return outcome.exit_code;
    }
    if (*probe) {
      const auto outcome = crl::cmd_probe_old(resolve_config(probe_flags));
      report(outcome);
      return outcome.exit_code;
    }
    if (*select) {
      const auto outcome = crl::cmd_select(resolve_config(select_flags));
      report(outcome);
      return outcome.exit_code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return crl::exit_code_for(e);
  }
  return 0;
}
