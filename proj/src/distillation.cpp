#include "crl/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crl/error.hpp"

namespace crl {

namespace {

constexpr double kProbabilityTolerance = 1e-9;
constexpr double kNegativeKlTolerance = 1e-12;

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a, b);
}

void check_probability(std::span<const double> p, std::string_view name) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + " has a negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1.0) > kProbabilityTolerance) {
    throw ConfigError(std::string(name) + " does not sum to 1 (sum " + std::to_string(s) + ")");
  }
}

double log_sum_exp(std::span<const double> x, double scale) {
  double m = -INFINITY;
  for (double v : x) m = std::max(m, v * scale);
  double s = 0.0;
  for (double v : x) s += std::exp(v * scale - m);
  return m + std::log(s);
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::scratch: return "scratch";
    case Method::finetune: return "finetune";
    case Method::lfl: return "lfl";
    case Method::lwf: return "lwf";
    case Method::fkd_basic: return "fkd_basic";
    case Method::fkd_ns: return "fkd_ns";
    case Method::fkd_cr: return "fkd_cr";
    case Method::fkd_ns_cr: return "fkd_ns_cr";
  }
  return "unknown";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::scratch, Method::finetune, Method::lfl,
                                           Method::lwf,     Method::fkd_basic, Method::fkd_ns,
                                           Method::fkd_cr,  Method::fkd_ns_cr};
  return methods;
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods()) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
  if (!(margin_beta >= 0.0) || !std::isfinite(margin_beta)) throw ConfigError("margin_beta must be >= 0");
  if (!(lambda_old >= 0.0) || !std::isfinite(lambda_old)) throw ConfigError("lambda_old must be >= 0");
  if (!(lfl_weight >= 0.0) || !std::isfinite(lfl_weight)) throw ConfigError("lfl_weight must be >= 0");
}

bool DistillConfig::selects_neighborhood() const {
  return method == Method::fkd_ns || method == Method::fkd_ns_cr;
}

bool DistillConfig::relaxes_consistency() const {
  return method == Method::fkd_cr || method == Method::fkd_ns_cr;
}

bool DistillConfig::is_fkd() const {
  return method == Method::fkd_basic || method == Method::fkd_ns || method == Method::fkd_cr ||
         method == Method::fkd_ns_cr;
}

LossGrad classification_loss(const Tensor& activations, std::span<const std::size_t> labels) {
  const std::size_t n = activations.rows();
  const std::size_t c = activations.cols();
  if (activations.rank() != 2 || n == 0) throw ShapeError("classification_loss: expected [n x C] activations");
  if (labels.size() != n) {
    throw ShapeError("classification_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  LossGrad out{0.0, Tensor::matrix(n, c)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw IndexError("classification_loss: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(c) + " classes");
    }
    auto row = activations.row(i);
    const double lse = log_sum_exp(row, 1.0);
    out.loss += (lse - row[labels[i]]) * inv_n;
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(row[j] - lse) * inv_n;
    g[labels[i]] -= inv_n;
  }
  return out;
}

std::vector<Neighborhood> select_neighborhood(const Tensor& old_activations, std::size_t k) {
  std::vector<Neighborhood> out;
  if (old_activations.empty()) return out;
  const std::size_t n = old_activations.rows();
  const std::size_t classes = old_activations.cols();
  const std::size_t take = (k == 0 || k >= classes) ? classes : k;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = old_activations.row(i);
    Neighborhood idx(classes);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto by_activation = [&](std::size_t a, std::size_t b) {
      return row[a] > row[b] || (row[a] == row[b] && a < b);
    };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), by_activation);
    idx.resize(take);
    out.push_back(std::move(idx));
  }
  return out;
}

std::vector<double> tempered_softmax(std::span<const double> activations, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("tempered_softmax: temperature must be > 0");
  if (activations.empty()) throw ShapeError("tempered_softmax: empty activation vector");
  const double scale = 1.0 / temperature;
  double m = -INFINITY;
  for (double v : activations) m = std::max(m, v * scale);
  std::vector<double> p(activations.size());
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(activations[j] * scale - m);
    s += p[j];
  }
  for (double& v : p) v /= s;
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw ShapeError("kl_divergence: length mismatch " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  }
  check_probability(p, "p");
  check_probability(q, "q");
  double d = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) {
    if (p[l] == 0.0) continue;
    if (q[l] == 0.0) {
      throw NumericalError("kl_divergence undefined: q[" + std::to_string(l) + "] == 0 where p > 0");
    }
    d += p[l] * (std::log(p[l]) - std::log(q[l]));
  }
  if (d < 0.0 && d >= -kNegativeKlTolerance) d = 0.0;
  return d;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double adaptive_margin(std::span<const double> p, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("adaptive_margin: beta must be >= 0");
  if (beta == 0.0) return 0.0;
  return std::max(0.0, beta * entropy(p));
}

HingeResult relaxed_kl(double divergence, double margin) {
  if (divergence > margin) return {divergence - margin, true};
  return {0.0, false};
}

DistillationResult fkd_old_loss(const Tensor& old_activations, const Tensor& new_activations,
                                const DistillConfig& cfg) {
  cfg.validate();
  DistillationResult out;
  if (old_activations.empty() && new_activations.empty()) return out;
  require_same_shape("fkd_old_loss", old_activations, new_activations);

  const std::size_t n = old_activations.rows();
  const std::size_t classes = old_activations.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_t = 1.0 / cfg.temperature;
  const std::size_t k = cfg.selects_neighborhood() ? cfg.neighborhood_size : 0;

  out.neighborhoods = select_neighborhood(old_activations, k);
  out.grad = Tensor::matrix(n, classes);
  out.divergences.resize(n);
  out.margins.resize(n);
  out.relaxed_divergences.resize(n);
  out.active.resize(n);

  std::vector<double> a_sel, b_sel;
  for (std::size_t i = 0; i < n; ++i) {
    const Neighborhood& s = out.neighborhoods[i];
    auto a = old_activations.row(i);
    auto b = new_activations.row(i);
    a_sel.resize(s.size());
    b_sel.resize(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) {
      a_sel[j] = a[s[j]];
      b_sel[j] = b[s[j]];
    }
    const auto p = tempered_softmax(a_sel, cfg.temperature);
    const auto q = tempered_softmax(b_sel, cfg.temperature);
    const double d = kl_divergence(p, q);
    const double margin = cfg.relaxes_consistency() ? adaptive_margin(p, cfg.margin_beta) : 0.0;
    const HingeResult h = relaxed_kl(d, margin);

    out.divergences[i] = d;
    out.margins[i] = margin;
    out.relaxed_divergences[i] = h.value;
    out.active[i] = h.active;
    out.gradient_columns += s.size();
    out.loss += h.value * inv_n;
    if (!h.active) continue;
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) g[s[j]] = (q[j] - p[j]) * inv_t * inv_n;
  }
  return out;
}

LossGrad lwf_old_loss(const Tensor& old_activations, const Tensor& new_activations, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("lwf_old_loss: temperature must be > 0");
  LossGrad out;
  if (old_activations.empty() && new_activations.empty()) return out;
  require_same_shape("lwf_old_loss", old_activations, new_activations);
  const std::size_t n = old_activations.rows();
  const std::size_t classes = old_activations.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_t = 1.0 / temperature;
  out.grad = Tensor::matrix(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = tempered_softmax(old_activations.row(i), temperature);
    auto b = new_activations.row(i);
    const double lse = log_sum_exp(b, inv_t);
    double ce = 0.0;
    auto g = out.grad.row(i);
    for (std::size_t l = 0; l < classes; ++l) {
      const double log_q = b[l] * inv_t - lse;
      ce -= p[l] * log_q;
      g[l] = (std::exp(log_q) - p[l]) * inv_t * inv_n;
    }
    out.loss += ce * inv_n;
  }
  return out;
}

LossGrad lfl_loss(const Tensor& old_embeddings, const Tensor& new_embeddings, double weight) {
  require_same_shape("lfl_loss", old_embeddings, new_embeddings);
  if (!(weight >= 0.0)) throw ConfigError("lfl_loss: weight must be >= 0");
  const std::size_t n = new_embeddings.rows();
  LossGrad out{0.0, Tensor(new_embeddings.shape(), 0.0)};
  const double scale = weight / static_cast<double>(n);
  for (std::size_t i = 0; i < new_embeddings.size(); ++i) {
    const double diff = new_embeddings[i] - old_embeddings[i];
    out.loss += diff * diff * scale;
    out.grad[i] = 2.0 * diff * scale;
  }
  return out;
}

double total_loss(double new_loss, double old_loss, double lambda_old) {
  return new_loss + lambda_old * old_loss;
}

}  // namespace crl
