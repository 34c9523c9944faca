#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

/// Training objective variants. The fkd_* family toggles neighborhood
/// selection (ns) and consistency relaxation (cr) on top of plain
/// KL-divergence distillation.
enum class Method { scratch, finetune, lfl, lwf, fkd_basic, fkd_ns, fkd_cr, fkd_ns_cr };

std::string to_string(Method m);
Method parse_method(const std::string& name);
const std::vector<Method>& all_methods();

struct DistillConfig {
  double temperature = 2.0;
  std::size_t neighborhood_size = 0;  // 0 selects every old class
  double margin_beta = 0.0;
  double lambda_old = 1.0;
  Method method = Method::fkd_ns_cr;
  double lfl_weight = 1.0;

  void validate() const;
  bool selects_neighborhood() const;
  bool relaxes_consistency() const;
  bool is_fkd() const;
};

/// Old-class indices selected for one sample, ordered by descending old-model activation.
using Neighborhood = std::vector<std::size_t>;

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Per-batch loss breakdown recorded by the trainer.
struct LossBundle {
  double new_loss = 0.0;
  double old_loss = 0.0;
  double total = 0.0;
  std::vector<double> relaxed_divergences;
  std::vector<double> margins;
};

/// Result of the flexible distillation loss.
struct DistillationResult {
  double loss = 0.0;
  Tensor grad;  // w.r.t. new-model activations on the old-class columns
  std::vector<Neighborhood> neighborhoods;
  std::vector<double> divergences;          // KL before relaxation
  std::vector<double> margins;
  std::vector<double> relaxed_divergences;  // hinge output
  std::vector<bool> active;
  /// Number of (sample, column) entries that may carry gradient; sum of |S_i|.
  std::size_t gradient_columns = 0;
};

/// Mean softmax cross-entropy over the given labels with its gradient.
LossGrad classification_loss(const Tensor& activations, std::span<const std::size_t> labels);

/// Top-k old classes per row, descending; ties go to the lower index.
/// k == 0 or k >= column count returns every index.
std::vector<Neighborhood> select_neighborhood(const Tensor& old_activations, std::size_t k);

/// softmax(a / T) with max subtraction.
std::vector<double> tempered_softmax(std::span<const double> activations, double temperature);

/// KL(p || q) in nats with 0 log 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Shannon entropy in nats.
double entropy(std::span<const double> p);

/// beta * entropy(p).
double adaptive_margin(std::span<const double> p, double beta);

struct HingeResult {
  double value = 0.0;
  bool active = false;
};

/// max(d - margin, 0); active iff d > margin.
HingeResult relaxed_kl(double divergence, double margin);

/// Flexible knowledge distillation loss over old-class columns.
///
/// For each sample the neighborhood S_i is ranked from the old activations
/// alone (every old class when the method does not select neighborhoods).
/// p and q are tempered softmaxes over S_i of the old and new activations, the
/// divergence KL(p || q) is reduced by the entropy margin when the method
/// relaxes consistency, and the hinge output is averaged over the batch.
/// Gradients reach only the new activations in S_i of hinge-active samples.
DistillationResult fkd_old_loss(const Tensor& old_activations, const Tensor& new_activations,
                                const DistillConfig& cfg);

/// Cross-entropy between tempered softmaxes over all old classes.
LossGrad lwf_old_loss(const Tensor& old_activations, const Tensor& new_activations,
                      double temperature);

/// weight * mean squared Euclidean distance between old and new embeddings.
LossGrad lfl_loss(const Tensor& old_embeddings, const Tensor& new_embeddings, double weight);

double total_loss(double new_loss, double old_loss, double lambda_old);

}  // namespace crl
