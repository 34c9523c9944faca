#include "crl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "crl/error.hpp"

namespace crl {

namespace {

// Batches of sample indices for one epoch.
std::vector<std::vector<std::size_t>> epoch_batches(const StepDataset& data, const TrainSchedule& s,
                                                    std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> batches;
  const std::size_t n = data.samples.size();
  if (!s.identity_balanced) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += s.batch_size) {
      const auto end = std::min(n, start + s.batch_size);
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }

  std::map<std::size_t, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < n; ++i) by_identity[data.samples[i].identity].push_back(i);
  std::vector<std::size_t> ids;
  for (const auto& [id, members] : by_identity) ids.push_back(id);
  std::shuffle(ids.begin(), ids.end(), rng);

  for (std::size_t start = 0; start < ids.size(); start += s.identities_per_batch) {
    std::vector<std::size_t> batch;
    const auto end = std::min(ids.size(), start + s.identities_per_batch);
    for (std::size_t k = start; k < end; ++k) {
      auto members = by_identity[ids[k]];
      std::shuffle(members.begin(), members.end(), rng);
      if (members.size() >= s.images_per_identity) {
        batch.insert(batch.end(), members.begin(),
                     members.begin() + static_cast<std::ptrdiff_t>(s.images_per_identity));
      } else {
        batch.insert(batch.end(), members.begin(), members.end());
        std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
        for (std::size_t r = members.size(); r < s.images_per_identity; ++r) batch.push_back(members[pick(rng)]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

bool needs_old_model(const DistillConfig& cfg) {
  return cfg.method == Method::lfl || cfg.method == Method::lwf || cfg.is_fkd();
}

StepDataset merge_steps(const TrainingData& data) {
  StepDataset all;
  all.step = 0;
  for (std::size_t t = 0; t < data.step_count(); ++t) {
    StepDataset d = data.step(t);
    if (t == 0) all.classes.begin = d.classes.begin;
    all.classes.end = d.classes.end;
    all.samples.insert(all.samples.end(), d.samples.begin(), d.samples.end());
  }
  return all;
}

}  // namespace

void TrainSchedule::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (identity_balanced && (identities_per_batch == 0 || images_per_identity == 0)) {
    throw ConfigError("identity-balanced batches need positive identities_per_batch and images_per_identity");
  }
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i].epoch <= milestones[i - 1].epoch) {
      throw ConfigError("learning-rate milestones must be strictly increasing");
    }
    if (!(milestones[i].factor > 0.0)) throw ConfigError("milestone factor must be positive");
  }
  optimizer.validate();
}

double TrainSchedule::lr_scale(std::size_t epoch) const {
  double scale = 1.0;
  for (const auto& m : milestones) {
    if (epoch >= m.epoch) scale *= m.factor;
  }
  return scale;
}

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), 0x43524cu};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

StepContext init_step(std::size_t step, const ModelState* previous, ClassRange classes, const NetworkShape& shape,
                      const OptimizerSettings& optimizer, std::uint64_t seed, bool fresh) {
  if (classes.size() == 0) throw ConfigError("init_step: a step needs at least one new class");
  std::mt19937_64 rng(step_seed(seed, step));
  std::optional<ModelState> old_model;
  ModelState model;
  if (fresh || previous == nullptr) {
    model = ModelState::random(shape, classes.end, rng);
  } else {
    if (previous->class_count() != classes.begin) {
      throw ConfigError("init_step: previous model has " + std::to_string(previous->class_count()) +
                        " classes but step " + std::to_string(step) + " starts at class " +
                        std::to_string(classes.begin));
    }
    old_model = *previous;
    model = *previous;
    model.append_classes(classes.size(), rng);
  }
  OptimizerState opt(optimizer, model);
  return StepContext{step, std::move(old_model), std::move(model), classes.begin, classes.size(), std::move(opt),
                     std::move(rng)};
}

StepResult train_one_step(StepContext& ctx, const StepDataset& data, const DistillConfig& cfg,
                          const TrainSchedule& schedule) {
  cfg.validate();
  schedule.validate();
  if (data.samples.empty()) throw DataError("step " + std::to_string(ctx.step) + " has no training samples");
  const std::size_t classes = ctx.model.class_count();
  for (const auto& s : data.samples) {
    if (s.identity >= classes || s.identity < data.classes.begin) {
      throw IndexError("label " + std::to_string(s.identity) + " outside classes [" +
                       std::to_string(data.classes.begin) + ", " + std::to_string(classes) + ")");
    }
  }

  const Tensor features = data.features();
  const std::vector<std::size_t> labels = data.labels();
  const bool distill = needs_old_model(cfg) && ctx.old_model.has_value() && ctx.old_class_count > 0;
  const std::size_t old_classes = ctx.old_class_count;

  StepResult result;
  std::size_t batch_index = 0;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr_scale = schedule.lr_scale(epoch);
    for (const auto& idx : epoch_batches(data, schedule, ctx.rng)) {
      const Tensor x = gather_rows(features, idx);
      std::vector<std::size_t> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(labels[i]);

      auto where = [&] {
        return "step " + std::to_string(ctx.step) + ", batch " + std::to_string(batch_index) + ", method " +
               to_string(cfg.method);
      };
      try {
        ForwardResult out = forward(ctx.model, x);
        LossGrad cls = classification_loss(out.activations, y);
        Tensor act_grad = std::move(cls.grad);
        Tensor emb_grad(out.embeddings.shape(), 0.0);

        LossBundle bundle;
        bundle.new_loss = cls.loss;
        if (distill) {
          if (cfg.method == Method::lfl) {
            const Tensor old_emb = embed(*ctx.old_model, x);
            LossGrad lfl = lfl_loss(old_emb, out.embeddings, cfg.lfl_weight);
            bundle.old_loss = lfl.loss;
            if (cfg.lambda_old != 0.0) {
              for (std::size_t i = 0; i < emb_grad.size(); ++i) emb_grad[i] += cfg.lambda_old * lfl.grad[i];
            }
          } else {
            const Tensor old_act = forward(*ctx.old_model, x).activations;
            const Tensor new_old_cols = slice_cols(out.activations, 0, old_classes);
            Tensor old_grad;
            if (cfg.method == Method::lwf) {
              LossGrad lwf = lwf_old_loss(old_act, new_old_cols, cfg.temperature);
              bundle.old_loss = lwf.loss;
              old_grad = std::move(lwf.grad);
            } else {
              DistillationResult fkd = fkd_old_loss(old_act, new_old_cols, cfg);
              bundle.old_loss = fkd.loss;
              bundle.relaxed_divergences = std::move(fkd.relaxed_divergences);
              bundle.margins = std::move(fkd.margins);
              old_grad = std::move(fkd.grad);
            }
            if (cfg.lambda_old != 0.0) {
              for (std::size_t i = 0; i < old_grad.rows(); ++i) {
                for (std::size_t j = 0; j < old_classes; ++j) act_grad(i, j) += cfg.lambda_old * old_grad(i, j);
              }
            }
          }
        }
        bundle.total = total_loss(bundle.new_loss, bundle.old_loss, cfg.lambda_old);
        if (!std::isfinite(bundle.total)) {
          throw NumericalError("non-finite loss at " + where());
        }
        GradientSet grads = backward(out.cache, act_grad, emb_grad);
        optimizer_update(ctx.model, grads, ctx.optimizer, lr_scale);
        result.history.push_back(std::move(bundle));
      } catch (const NumericalError& e) {
        const std::string msg = e.what();
        if (msg.rfind("non-finite loss at", 0) == 0) throw;
        throw NumericalError("training diverged at " + where() + ": " + msg);
      }
      ++batch_index;
    }
  }
  result.model = ctx.model;
  return result;
}

std::vector<StepOutcome> run_continual(const TrainingData& data, const Evaluator& evaluator,
                                       const DistillConfig& cfg, const TrainSchedule& schedule,
                                       const NetworkShape& shape, RunMode mode, std::uint64_t seed) {
  cfg.validate();
  schedule.validate();
  const std::size_t steps = data.step_count();
  if (steps == 0) throw DataError("benchmark has no steps");
  std::vector<StepOutcome> outcomes;

  if (mode == RunMode::joint) {
    StepDataset all = merge_steps(data);
    DistillConfig joint_cfg = cfg;
    joint_cfg.method = Method::finetune;
    StepContext ctx = init_step(0, nullptr, all.classes, shape, schedule.optimizer, seed, true);
    StepResult r = train_one_step(ctx, all, joint_cfg, schedule);
    EvalReport report = evaluator(r.model, steps - 1);
    outcomes.push_back({std::move(r.model), std::move(report), std::move(r.history)});
    return outcomes;
  }

  const bool fresh_each_step = cfg.method == Method::scratch;
  for (std::size_t t = 0; t < steps; ++t) {
    StepResult r;
    {
      StepDataset d = data.step(t);
      const ModelState* prev = outcomes.empty() ? nullptr : &outcomes.back().model;
      StepContext ctx = init_step(t, prev, d.classes, shape, schedule.optimizer, seed, fresh_each_step);
      r = train_one_step(ctx, d, cfg, schedule);
    }
    EvalReport report = evaluator(r.model, t);
    outcomes.push_back({std::move(r.model), std::move(report), std::move(r.history)});
  }
  return outcomes;
}

std::vector<double> old_class_probe(const std::vector<ModelState>& models, const std::vector<IdentitySample>& probe,
                                    ClassRange old_classes) {
  if (probe.empty()) throw DataError("old_class_probe: empty probe set");
  for (const auto& s : probe) {
    if (!old_classes.contains(s.identity)) {
      throw DataError("probe sample " + std::to_string(s.id) + " is not from the probed classes");
    }
  }
  StepDataset holder{0, old_classes, probe};
  const Tensor x = holder.features();
  std::vector<double> out;
  for (const auto& model : models) {
    if (model.class_count() < old_classes.end) throw ShapeError("old_class_probe: model lacks probed classes");
    const Tensor acts = forward(model, x).activations;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      std::size_t best = old_classes.begin;
      for (std::size_t c = old_classes.begin; c < old_classes.end; ++c) {
        if (acts(i, c) > acts(i, best)) best = c;
      }
      if (best == probe[i].identity) ++correct;
    }
    out.push_back(static_cast<double>(correct) / static_cast<double>(probe.size()));
  }
  return out;
}

std::vector<double> old_class_retrieval(const std::vector<ModelState>& models,
                                        const std::vector<IdentitySample>& probe) {
  if (probe.empty()) throw DataError("old_class_retrieval: empty probe set");
  const auto meta = meta_of(probe);
  std::vector<double> out;
  for (const auto& model : models) {
    const Tensor e = embed_all(model, probe);
    out.push_back(retrieval_metrics(e, meta, e, meta).top1);
  }
  return out;
}

}  // namespace crl
