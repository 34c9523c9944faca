#include "crl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "crl/error.hpp"

namespace crl {

namespace {

constexpr std::size_t kFolds = 10;

}  // namespace

std::vector<SampleMeta> meta_of(const std::vector<IdentitySample>& samples) {
  std::vector<SampleMeta> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.identity, s.camera});
  return out;
}

Tensor embed_all(const ModelState& model, const std::vector<IdentitySample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw DataError("embed_all: no samples");
  if (batch_size == 0) throw ConfigError("embed_all: batch size must be positive");
  const std::size_t d = model.input_dim();
  Tensor out = Tensor::matrix(samples.size(), model.embed_dim());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    Tensor batch = Tensor::matrix(end - start, d);
    for (std::size_t i = start; i < end; ++i) {
      const auto& f = samples[i].feature;
      if (f.size() != d) {
        throw ShapeError("embed_all: sample " + std::to_string(samples[i].id) + " has feature " +
                         f.shape_string() + ", model expects " + std::to_string(d));
      }
      std::copy(f.data().begin(), f.data().end(), batch.row(i - start).begin());
    }
    Tensor e = embed(model, batch);
    for (std::size_t i = start; i < end; ++i) {
      auto src = e.row(i - start);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
  }
  return out;
}

RankedList rank_gallery(std::size_t query, std::span<const double> distances,
                        std::span<const SampleMeta> query_meta, std::span<const SampleMeta> gallery_meta) {
  RankedList list;
  list.query = query;
  const SampleMeta& q = query_meta[query];
  for (std::size_t j = 0; j < gallery_meta.size(); ++j) {
    const SampleMeta& g = gallery_meta[j];
    if (g.identity == q.identity && g.camera == q.camera) continue;
    list.gallery.push_back(j);
  }
  std::stable_sort(list.gallery.begin(), list.gallery.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  list.relevant.reserve(list.gallery.size());
  for (std::size_t j : list.gallery) list.relevant.push_back(gallery_meta[j].identity == q.identity);
  return list;
}

double average_precision(const std::vector<bool>& relevant) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    if (!relevant[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

RetrievalMetrics retrieval_metrics(const Tensor& query_embeddings, std::span<const SampleMeta> query_meta,
                                   const Tensor& gallery_embeddings, std::span<const SampleMeta> gallery_meta) {
  if (query_embeddings.rows() != query_meta.size() || gallery_embeddings.rows() != gallery_meta.size()) {
    throw ShapeError("retrieval_metrics: embedding rows and metadata disagree");
  }
  if (query_meta.empty() || gallery_meta.empty()) throw ProtocolError("retrieval_metrics: empty query or gallery");
  const Tensor dist = l2_distance_matrix(query_embeddings, gallery_embeddings);
  RetrievalMetrics out;
  std::size_t correct = 0;
  double ap_sum = 0.0;
  for (std::size_t i = 0; i < query_meta.size(); ++i) {
    const RankedList list = rank_gallery(i, dist.row(i), query_meta, gallery_meta);
    if (std::find(list.relevant.begin(), list.relevant.end(), true) == list.relevant.end()) continue;
    ++out.evaluated_queries;
    if (list.relevant.front()) ++correct;
    ap_sum += average_precision(list.relevant);
  }
  if (out.evaluated_queries == 0) throw ProtocolError("retrieval_metrics: no query has a relevant gallery entry");
  const double n = static_cast<double>(out.evaluated_queries);
  out.top1 = static_cast<double>(correct) / n;
  out.mean_ap = ap_sum / n;
  return out;
}

double threshold_accuracy(std::span<const ScoredPair> pairs, double threshold) {
  if (pairs.empty()) throw ProtocolError("threshold_accuracy: no pairs");
  std::size_t right = 0;
  for (const auto& p : pairs) {
    if ((p.distance < threshold) == p.genuine) ++right;
  }
  return static_cast<double>(right) / static_cast<double>(pairs.size());
}

double best_threshold(std::span<const ScoredPair> pairs) {
  if (pairs.empty()) throw ProtocolError("best_threshold: no pairs");
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.distance < b.distance; });
  const std::size_t impostors =
      static_cast<std::size_t>(std::count_if(sorted.begin(), sorted.end(), [](const auto& p) { return !p.genuine; }));

  // Threshold below everything: every pair predicted impostor.
  double best = sorted.front().distance;
  std::size_t best_right = impostors;
  std::size_t genuine_below = 0, impostor_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].distance == sorted[i].distance) {
      (sorted[j].genuine ? genuine_below : impostor_below) += 1;
      ++j;
    }
    const double candidate = j < sorted.size() ? 0.5 * (sorted[i].distance + sorted[j].distance)
                                               : std::nextafter(sorted[i].distance, std::numeric_limits<double>::infinity());
    const std::size_t right = genuine_below + (impostors - impostor_below);
    if (right > best_right) {
      best_right = right;
      best = candidate;
    }
    i = j;
  }
  return best;
}

VerificationResult verification_tenfold(std::span<const ScoredPair> pairs) {
  if (pairs.size() < kFolds || pairs.size() % kFolds != 0) {
    throw ProtocolError("verification_tenfold: pair count " + std::to_string(pairs.size()) +
                        " is not a positive multiple of 10");
  }
  const std::size_t fold_size = pairs.size() / kFolds;
  for (std::size_t f = 0; f < kFolds; ++f) {
    auto fold = pairs.subspan(f * fold_size, fold_size);
    const bool has_genuine = std::any_of(fold.begin(), fold.end(), [](const auto& p) { return p.genuine; });
    const bool has_impostor = std::any_of(fold.begin(), fold.end(), [](const auto& p) { return !p.genuine; });
    if (!has_genuine || !has_impostor) {
      throw ProtocolError("verification fold " + std::to_string(f) + " lacks genuine or impostor pairs");
    }
  }
  VerificationResult out;
  for (std::size_t f = 0; f < kFolds; ++f) {
    std::vector<ScoredPair> train;
    train.reserve(pairs.size() - fold_size);
    train.insert(train.end(), pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(f * fold_size));
    train.insert(train.end(), pairs.begin() + static_cast<std::ptrdiff_t>((f + 1) * fold_size), pairs.end());
    const double threshold = best_threshold(train);
    out.thresholds.push_back(threshold);
    out.fold_accuracies.push_back(threshold_accuracy(pairs.subspan(f * fold_size, fold_size), threshold));
  }
  out.accuracy = std::accumulate(out.fold_accuracies.begin(), out.fold_accuracies.end(), 0.0) /
                 static_cast<double>(kFolds);
  return out;
}

EvalReport evaluate(const ModelState& model, const Benchmark& benchmark, std::size_t step, std::uint64_t seed,
                    const std::string& config_digest) {
  const auto query = benchmark.with_role(Role::query);
  const auto gallery = benchmark.with_role(Role::gallery);
  const auto qm = meta_of(query);
  const auto gm = meta_of(gallery);
  const auto retrieval = retrieval_metrics(embed_all(model, query), qm, embed_all(model, gallery), gm);

  std::vector<IdentitySample> pool;
  std::unordered_map<std::size_t, std::size_t> row_of;
  for (const auto& p : benchmark.pairs) {
    for (std::size_t id : {p.first, p.second}) {
      if (row_of.emplace(id, pool.size()).second) pool.push_back(benchmark.samples.at(id));
    }
  }
  const Tensor emb = embed_all(model, pool);
  std::vector<ScoredPair> scored;
  scored.reserve(benchmark.pairs.size());
  for (const auto& p : benchmark.pairs) {
    auto a = emb.row(row_of.at(p.first));
    auto b = emb.row(row_of.at(p.second));
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    scored.push_back({std::sqrt(s), p.genuine});
  }
  const auto verification = verification_tenfold(scored);

  EvalReport r;
  r.step = step;
  r.top1 = retrieval.top1;
  r.mean_ap = retrieval.mean_ap;
  r.verification_accuracy = verification.accuracy;
  r.fold_accuracies = verification.fold_accuracies;
  r.fold_thresholds = verification.thresholds;
  r.seed = seed;
  r.config_digest = config_digest;
  return r;
}

RetrievalMetrics evaluate_validation(const ModelState& model, const Benchmark& benchmark) {
  const auto query = benchmark.with_role(Role::validation_query);
  const auto gallery = benchmark.with_role(Role::validation_gallery);
  if (query.empty() || gallery.empty()) throw DataError("benchmark has no validation identities");
  return retrieval_metrics(embed_all(model, query), meta_of(query), embed_all(model, gallery), meta_of(gallery));
}

}  // namespace crl
