#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "crl/benchmark.hpp"
#include "crl/distillation.hpp"
#include "crl/eval.hpp"
#include "crl/network.hpp"
#include "crl/optimizer.hpp"

namespace crl {

struct Milestone {
  std::size_t epoch = 0;
  double factor = 0.1;

  bool operator==(const Milestone&) const = default;
};

struct TrainSchedule {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::vector<Milestone> milestones{{15, 0.1}, {25, 0.1}};
  /// P identities x R images per batch instead of plain shuffled batches.
  bool identity_balanced = true;
  std::size_t identities_per_batch = 8;
  std::size_t images_per_identity = 8;
  OptimizerSettings optimizer;

  void validate() const;
  /// Product of the factors of every milestone reached by `epoch`.
  double lr_scale(std::size_t epoch) const;
};

/// State of one learning step: the frozen previous model (absent at step 0 and
/// for scratch training) and the model being trained.
struct StepContext {
  std::size_t step = 0;
  std::optional<ModelState> old_model;
  ModelState model;
  std::size_t old_class_count = 0;
  std::size_t new_class_count = 0;
  OptimizerState optimizer;
  std::mt19937_64 rng;
};

/// Seed of the random stream used by `step` of a run seeded with `seed`.
std::uint64_t step_seed(std::uint64_t seed, std::size_t step);

/// Copies `previous` (when given and `fresh` is false) and appends freshly
/// initialized classifier columns for `classes`; otherwise builds a random
/// model covering classes [0, classes.end).
StepContext init_step(std::size_t step, const ModelState* previous, ClassRange classes, const NetworkShape& shape,
                      const OptimizerSettings& optimizer, std::uint64_t seed, bool fresh);

struct StepResult {
  ModelState model;
  std::vector<LossBundle> history;  // one entry per batch
};

/// Optimizes L_new + lambda_old * L_old over the step's data.
StepResult train_one_step(StepContext& ctx, const StepDataset& data, const DistillConfig& cfg,
                          const TrainSchedule& schedule);

/// Source of per-step training data. run_continual reads step t only while
/// training step t (or once up front in joint mode).
class TrainingData {
 public:
  virtual ~TrainingData() = default;
  virtual std::size_t step_count() const = 0;
  virtual StepDataset step(std::size_t t) const = 0;
};

class BenchmarkTrainingData : public TrainingData {
 public:
  explicit BenchmarkTrainingData(const Benchmark& b) : benchmark_(b) {}
  std::size_t step_count() const override { return benchmark_.step_count(); }
  StepDataset step(std::size_t t) const override { return benchmark_.step(t); }

 private:
  const Benchmark& benchmark_;
};

enum class RunMode { continual, joint };

struct StepOutcome {
  ModelState model;
  EvalReport report;
  std::vector<LossBundle> history;
};

using Evaluator = std::function<EvalReport(const ModelState&, std::size_t step)>;

/// Trains step after step and evaluates after each one. Joint mode trains once
/// on the union of all steps and reports a single evaluation labelled with the
/// last step index.
std::vector<StepOutcome> run_continual(const TrainingData& data, const Evaluator& evaluator,
                                       const DistillConfig& cfg, const TrainSchedule& schedule,
                                       const NetworkShape& shape, RunMode mode, std::uint64_t seed);

/// Accuracy of argmax over the columns of `old_classes` on the probe samples,
/// one value per model.
std::vector<double> old_class_probe(const std::vector<ModelState>& models, const std::vector<IdentitySample>& probe,
                                    ClassRange old_classes);

/// Embedding-based counterpart: top-1 of each probe image against the other
/// probe images (same identity and camera excluded), one value per model.
std::vector<double> old_class_retrieval(const std::vector<ModelState>& models,
                                        const std::vector<IdentitySample>& probe);

}  // namespace crl
