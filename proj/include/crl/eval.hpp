#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crl/benchmark.hpp"
#include "crl/network.hpp"

namespace crl {

/// Per-step retrieval and verification metrics.
struct EvalReport {
  std::size_t step = 0;
  double top1 = 0.0;
  double mean_ap = 0.0;
  double verification_accuracy = 0.0;
  std::vector<double> fold_accuracies;
  std::vector<double> fold_thresholds;
  std::uint64_t seed = 0;
  std::string config_digest;

  bool operator==(const EvalReport&) const = default;
};

/// Identity and camera of one embedded sample.
struct SampleMeta {
  std::size_t identity = 0;
  std::size_t camera = 0;
};

std::vector<SampleMeta> meta_of(const std::vector<IdentitySample>& samples);

/// Gallery positions sorted by ascending distance (ties by gallery index),
/// with same-identity same-camera entries removed.
struct RankedList {
  std::size_t query = 0;
  std::vector<std::size_t> gallery;
  std::vector<bool> relevant;
};

/// Embeddings of `samples` computed in chunks of `batch_size` rows.
Tensor embed_all(const ModelState& model, const std::vector<IdentitySample>& samples,
                 std::size_t batch_size = 256);

RankedList rank_gallery(std::size_t query, std::span<const double> distances,
                        std::span<const SampleMeta> query_meta, std::span<const SampleMeta> gallery_meta);

/// Mean over relevant positions k of (relevant hits in top k) / k.
double average_precision(const std::vector<bool>& relevant);

struct RetrievalMetrics {
  double top1 = 0.0;
  double mean_ap = 0.0;
  std::size_t evaluated_queries = 0;
};

/// Top-1 accuracy and mAP by Euclidean distance. Queries without any relevant
/// gallery entry are excluded from both metrics.
RetrievalMetrics retrieval_metrics(const Tensor& query_embeddings, std::span<const SampleMeta> query_meta,
                                   const Tensor& gallery_embeddings, std::span<const SampleMeta> gallery_meta);

struct ScoredPair {
  double distance = 0.0;
  bool genuine = false;
};

/// Threshold maximizing accuracy of "genuine iff distance < threshold" on the
/// given pairs. Candidates are the smallest distance, the midpoints between
/// consecutive distinct distances and just above the largest; ties keep the
/// smaller threshold.
double best_threshold(std::span<const ScoredPair> pairs);
double threshold_accuracy(std::span<const ScoredPair> pairs, double threshold);

struct VerificationResult {
  double accuracy = 0.0;
  std::vector<double> fold_accuracies;
  std::vector<double> thresholds;
};

/// Ten contiguous folds; each fold is scored with the threshold chosen on the
/// other nine.
VerificationResult verification_tenfold(std::span<const ScoredPair> pairs);

/// Test-set report for one model: reduced query/gallery retrieval plus pair verification.
EvalReport evaluate(const ModelState& model, const Benchmark& benchmark, std::size_t step,
                    std::uint64_t seed, const std::string& config_digest);

/// Retrieval on the validation identities (used for hyperparameter selection).
RetrievalMetrics evaluate_validation(const ModelState& model, const Benchmark& benchmark);

}  // namespace crl
