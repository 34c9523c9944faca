#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crl/error.hpp"
#include "crl/eval.hpp"
#include "oracles.hpp"

using crl::SampleMeta;
using crl::ScoredPair;
using crl::Tensor;

namespace {

std::vector<SampleMeta> metas(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& cams) {
  std::vector<SampleMeta> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], cams[i]});
  return out;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace

TEST_CASE("average precision hand example") {
  // Relevant at ranks 1 and 3 of 3: (1/1 + 2/3) / 2
  CHECK(std::abs(crl::average_precision({true, false, true}) - 5.0 / 6.0) <= 1e-12);
  CHECK(crl::average_precision({true}) == 1.0);
  CHECK(crl::average_precision({false, false}) == 0.0);
}

TEST_CASE("AP through retrieval_metrics: gallery at distances 1, 2, 3") {
  const Tensor q = Tensor::from_rows({{0.0}});
  const Tensor g = Tensor::from_rows({{1.0}, {2.0}, {3.0}});
  const auto m = crl::retrieval_metrics(q, metas({0}, {0}), g, metas({0, 1, 0}, {1, 1, 1}));
  CHECK(std::abs(m.mean_ap - 5.0 / 6.0) <= 1e-12);
  CHECK(m.top1 == 1.0);
}

TEST_CASE("perfect retrieval") {
  const Tensor q = Tensor::from_rows({{0, 0}, {10, 0}, {0, 10}});
  const Tensor g = Tensor::from_rows({{0.1, 0}, {10, 0.1}, {0, 9.9}});
  const auto m = crl::retrieval_metrics(q, metas({0, 1, 2}, {0, 0, 0}), g, metas({0, 1, 2}, {1, 1, 1}));
  CHECK(m.top1 == 1.0);
  CHECK(m.mean_ap == 1.0);
  CHECK(m.evaluated_queries == 3);
}

TEST_CASE("ranking excludes same identity and camera, ties go to the lower gallery index") {
  const std::vector<double> dist{1.0, 0.5, 0.5, 0.1};
  const auto q = metas({3}, {0});
  const auto g = metas({1, 2, 3, 3}, {0, 0, 1, 0});
  const auto list = crl::rank_gallery(0, dist, q, g);
  CHECK(list.gallery == std::vector<std::size_t>{1, 2, 0});
  CHECK(list.relevant == std::vector<bool>{false, true, false});
}

TEST_CASE("retrieval metrics equal the brute-force oracle on 100 random instances") {
  std::mt19937_64 rng(1);
  int compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto r = oracle::random_retrieval_instance(rng, trial % 2 == 1);
    const auto ref = oracle::brute_force_retrieval(r.q, r.q_id, r.q_cam, r.g, r.g_id, r.g_cam);
    REQUIRE(ref.evaluated > 0);
    const auto m = crl::retrieval_metrics(r.q, metas(r.q_id, r.q_cam), r.g, metas(r.g_id, r.g_cam));
    CHECK(m.evaluated_queries == ref.evaluated);
    CHECK(m.top1 == ref.top1);
    CHECK(m.mean_ap == ref.mean_ap);
    ++compared;
  }
  CHECK(compared == 100);
}

TEST_CASE("random embeddings: top-1 is about 1/L") {
  const std::size_t identities = 5;
  std::vector<double> per_seed;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor q = oracle::random_matrix(10, 4, rng);
    const Tensor g = oracle::random_matrix(identities * 4, 4, rng);
    std::vector<std::size_t> q_id, g_id;
    for (std::size_t i = 0; i < 10; ++i) q_id.push_back(i % identities);
    for (std::size_t j = 0; j < g.rows(); ++j) g_id.push_back(j % identities);
    const auto m = crl::retrieval_metrics(q, metas(q_id, std::vector<std::size_t>(10, 0)), g,
                                          metas(g_id, std::vector<std::size_t>(g.rows(), 1)));
    per_seed.push_back(m.top1);
  }
  const double se = sd_of(per_seed) / std::sqrt(100.0);
  CHECK(std::abs(mean_of(per_seed) - 1.0 / identities) < 3.0 * se);
}

TEST_CASE("metrics are invariant under rotation and translation of the embedding space") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = oracle::random_retrieval_instance(rng, false);
    const std::size_t d = r.q.cols();
    // Random orthogonal matrix by Gram-Schmidt.
    Tensor rot = oracle::random_matrix(d, d, rng);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += rot(i, k) * rot(j, k);
        for (std::size_t k = 0; k < d; ++k) rot(i, k) -= dot * rot(j, k);
      }
      double norm = 0.0;
      for (std::size_t k = 0; k < d; ++k) norm += rot(i, k) * rot(i, k);
      for (std::size_t k = 0; k < d; ++k) rot(i, k) /= std::sqrt(norm);
    }
    const Tensor shift = oracle::random_matrix(1, d, rng, -5, 5);
    auto move = [&](const Tensor& x) {
      Tensor y = crl::matmul(x, rot);
      for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t k = 0; k < d; ++k) y(i, k) += shift[k];
      return y;
    };
    const auto qm = metas(r.q_id, r.q_cam), gm = metas(r.g_id, r.g_cam);
    const auto a = crl::retrieval_metrics(r.q, qm, r.g, gm);
    const auto b = crl::retrieval_metrics(move(r.q), qm, move(r.g), gm);
    CHECK(a.top1 == doctest::Approx(b.top1).epsilon(1e-12));
    CHECK(a.mean_ap == doctest::Approx(b.mean_ap).epsilon(1e-12));
  }
}

TEST_CASE("retrieval protocol errors") {
  const Tensor q = Tensor::from_rows({{0.0}});
  const Tensor g = Tensor::from_rows({{1.0}, {2.0}});
  // The only same-identity image shares the query's camera.
  CHECK_THROWS_AS(crl::retrieval_metrics(q, metas({0}, {0}), g, metas({0, 1}, {0, 0})), crl::ProtocolError);
  CHECK_THROWS_AS(crl::retrieval_metrics(q, metas({0, 1}, {0, 0}), g, metas({0, 1}, {0, 0})), crl::ShapeError);
}

TEST_CASE("threshold scan matches an exhaustive candidate oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> dist;
    std::vector<bool> genuine;
    std::vector<ScoredPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      const bool gen = rng() % 2;
      // Every third trial uses a coarse grid so distances repeat.
      const double d = trial % 3 == 0 ? static_cast<double>(rng() % 4)
                                      : std::uniform_real_distribution<>(0, 2)(rng) + (gen ? 0.0 : 0.5);
      dist.push_back(d);
      genuine.push_back(gen);
      pairs.push_back({d, gen});
    }
    CHECK(crl::best_threshold(pairs) == oracle::brute_force_threshold(dist, genuine));
  }
}

TEST_CASE("separable verification scores 1") {
  std::vector<ScoredPair> pairs;
  for (int f = 0; f < 10; ++f)
    for (int k = 0; k < 10; ++k) pairs.push_back({k < 5 ? 0.1 * k : 1.0 + 0.1 * k, k < 5});
  const auto v = crl::verification_tenfold(pairs);
  CHECK(v.accuracy == 1.0);
  CHECK(v.fold_accuracies.size() == 10);
  for (double t : v.thresholds) CHECK((t > 0.4 && t < 1.5));
}

TEST_CASE("shuffled labels: verification accuracy is about 0.5") {
  std::vector<double> acc;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<ScoredPair> pairs;
    for (int f = 0; f < 10; ++f) {
      std::vector<ScoredPair> fold;
      for (int k = 0; k < 30; ++k) fold.push_back({std::uniform_real_distribution<>(0, 1)(rng), k < 15});
      std::shuffle(fold.begin(), fold.end(), rng);
      pairs.insert(pairs.end(), fold.begin(), fold.end());
    }
    acc.push_back(crl::verification_tenfold(pairs).accuracy);
  }
  CHECK(std::abs(mean_of(acc) - 0.5) < 3.0 * sd_of(acc) / std::sqrt(60.0));
}

TEST_CASE("a single repeated distance gives a well-defined accuracy") {
  std::vector<ScoredPair> pairs;
  for (int k = 0; k < 40; ++k) pairs.push_back({0.7, k % 2 == 0});
  const auto v = crl::verification_tenfold(pairs);
  CHECK(v.accuracy == 0.5);
  for (double t : v.thresholds) CHECK(t == 0.7);
}

TEST_CASE("verification protocol errors") {
  std::vector<ScoredPair> pairs(20, {0.5, true});
  CHECK_THROWS_AS(crl::verification_tenfold(pairs), crl::ProtocolError);
  pairs.resize(15);
  CHECK_THROWS_AS(crl::verification_tenfold(pairs), crl::ProtocolError);
  CHECK_THROWS_AS(crl::best_threshold({}), crl::ProtocolError);
}

TEST_CASE("embed_all is independent of chunking and equivariant to permutation") {
  std::mt19937_64 rng(4);
  const crl::ModelState model = crl::ModelState::random({6, {12}, 4}, 3, rng);
  std::vector<crl::IdentitySample> samples;
  for (std::size_t i = 0; i < 23; ++i) {
    crl::IdentitySample s;
    s.id = i;
    s.feature = oracle::random_matrix(1, 6, rng);
    s.feature = Tensor::vector(s.feature.data());
    samples.push_back(s);
  }
  const Tensor whole = crl::embed_all(model, samples);
  for (std::size_t bs : {1u, 5u, 7u, 23u}) CHECK(crl::embed_all(model, samples, bs) == whole);

  std::vector<std::size_t> perm(23);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<crl::IdentitySample> shuffled;
  for (auto p : perm) shuffled.push_back(samples[p]);
  const Tensor e = crl::embed_all(model, shuffled, 4);
  for (std::size_t i = 0; i < 23; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(e(i, k) == whole(perm[i], k));

  // A single sample matches forward().
  const auto fwd = crl::forward(model, Tensor({1, 6}, samples[0].feature.data()));
  const std::vector<crl::IdentitySample> one{samples[0]};
  CHECK(crl::embed_all(model, one).data() == fwd.embeddings.data());
  CHECK_THROWS_AS(crl::embed_all(model, {}), crl::DataError);
}

TEST_CASE("benchmark evaluation is deterministic and well-formed") {
  crl::GeneratorParams p;
  p.train_identities = 20;
  p.test_identities = 8;
  p.images_per_identity = 8;
  p.feature_dim = 6;
  p.steps = 2;
  p.verification_pairs = 100;
  const auto b = crl::generate(p, 6);
  std::mt19937_64 rng(5);
  const crl::ModelState model = crl::ModelState::random({6, {10}, 4}, 18, rng);
  const auto a = crl::evaluate(model, b, 1, 7, "abc");
  const auto c = crl::evaluate(model, b, 1, 7, "abc");
  CHECK(a == c);
  CHECK(a.step == 1);
  CHECK(a.fold_accuracies.size() == 10);
  CHECK((a.top1 >= 0.0 && a.top1 <= 1.0));
  CHECK((a.mean_ap > 0.0 && a.mean_ap <= 1.0));
  CHECK((a.verification_accuracy >= 0.0 && a.verification_accuracy <= 1.0));
  const auto v = crl::evaluate_validation(model, b);
  CHECK(v.evaluated_queries > 0);
}
