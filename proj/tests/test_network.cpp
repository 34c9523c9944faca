#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crl/error.hpp"
#include "crl/network.hpp"
#include "oracles.hpp"

using crl::DenseLayer;
using crl::ModelState;
using crl::Tensor;

namespace {

ModelState random_model(std::size_t in, std::vector<std::size_t> hidden, std::size_t emb, std::size_t classes,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelState m = ModelState::random({in, std::move(hidden), emb}, classes, rng);
  // Non-zero biases so the bias gradients are exercised.
  for (Tensor* p : m.parameters()) {
    if (p->rank() == 1) {
      std::uniform_real_distribution<double> u(-0.2, 0.2);
      for (double& v : p->data()) v = u(rng);
    }
  }
  return m;
}

double projected_loss(const ModelState& m, const Tensor& x, const Tensor& ra, const Tensor& re) {
  const auto out = crl::forward(m, x);
  double s = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) s += ra[i] * out.activations[i];
  for (std::size_t i = 0; i < re.size(); ++i) s += re[i] * out.embeddings[i];
  return s;
}

bool near_relu_kink(const ModelState& m, const Tensor& x) {
  const auto out = crl::forward(m, x);
  for (std::size_t k = 0; k < m.layers().size(); ++k) {
    if (!m.layers()[k].relu) continue;
    for (double z : out.cache.pre_activations[k].data()) {
      if (std::abs(z) < 1e-3) return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("identity layer passes the batch through") {
  ModelState m({DenseLayer{Tensor::from_rows({{1, 0}, {0, 1}}), Tensor({2}), false}},
               Tensor::from_rows({{1, 0}, {0, 1}}));
  const auto out = crl::forward(m, Tensor::from_rows({{1, 2}}));
  CHECK(out.embeddings == Tensor::from_rows({{1, 2}}));
  // Classifier columns w1=[1,0], w2=[0,1] on embedding [1,2].
  CHECK(out.activations == Tensor::from_rows({{1, 2}}));
}

TEST_CASE("forward rejects a batch of the wrong width") {
  ModelState m = random_model(4, {3}, 2, 5, 1);
  CHECK_THROWS_AS(crl::forward(m, Tensor::matrix(2, 3)), crl::ShapeError);
  CHECK_THROWS_AS(crl::embed(m, Tensor::matrix(2, 5)), crl::ShapeError);
}

TEST_CASE("forward of a 3-layer net matches an extended-precision matrix chain") {
  std::mt19937_64 rng(11);
  ModelState m = random_model(8, {6, 5}, 4, 3, 12);
  const Tensor x = oracle::random_matrix(4, 8, rng);
  const auto out = crl::forward(m, x);

  std::vector<long double> h = oracle::widen(x);
  std::size_t width = 8;
  for (const auto& layer : m.layers()) {
    const std::size_t next = layer.weight.cols();
    auto z = oracle::matmul_ld(h, oracle::widen(layer.weight), 4, width, next);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < next; ++j) {
        auto& v = z[i * next + j];
        v += layer.bias[j];
        if (layer.relu && v < 0) v = 0;
      }
    h = z;
    width = next;
  }
  const auto acts = oracle::matmul_ld(h, oracle::widen(m.classifier()), 4, width, 3);
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const double ref = static_cast<double>(acts[i]);
    CHECK(std::abs(out.activations[i] - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
  }
  CHECK(crl::embed(m, x) == out.embeddings);
}

TEST_CASE("forward is pure") {
  std::mt19937_64 rng(13);
  ModelState m = random_model(5, {7}, 3, 4, 14);
  const Tensor x = oracle::random_matrix(6, 5, rng);
  const auto a = crl::forward(m, x);
  const auto b = crl::forward(m, x);
  CHECK(a.activations == b.activations);
  CHECK(a.embeddings == b.embeddings);
}

TEST_CASE("zero upstream gradients give an all-zero gradient set") {
  std::mt19937_64 rng(15);
  ModelState m = random_model(5, {7}, 3, 4, 16);
  const auto out = crl::forward(m, oracle::random_matrix(6, 5, rng));
  const auto g = crl::backward(out.cache, Tensor::matrix(6, 4), Tensor::matrix(6, 3));
  CHECK(g == crl::GradientSet::zeros_like(m));
}

TEST_CASE("loss = sum(activations): classifier gradient column is the summed embedding") {
  std::mt19937_64 rng(17);
  ModelState m = random_model(5, {7}, 3, 4, 18);
  const auto out = crl::forward(m, oracle::random_matrix(6, 5, rng));
  const auto g = crl::backward(out.cache, Tensor::matrix(6, 4, 1.0), Tensor::matrix(6, 3));
  const Tensor& gc = g.tensors.back();
  for (std::size_t r = 0; r < 3; ++r) {
    double col = 0.0;
    for (std::size_t i = 0; i < 6; ++i) col += out.embeddings(i, r);
    for (std::size_t j = 0; j < 4; ++j) CHECK(gc(r, j) == doctest::Approx(col).epsilon(1e-12));
  }
}

TEST_CASE("backward matches central finite differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const std::size_t layers = 1 + seed % 3;
    std::vector<std::size_t> hidden;
    for (std::size_t k = 1; k < layers; ++k) hidden.push_back(3 + (seed + k) % 4);
    ModelState m = random_model(4, hidden, 3, 5, seed + 200);
    const Tensor x = oracle::random_matrix(3, 4, rng);
    if (near_relu_kink(m, x)) continue;
    const Tensor ra = oracle::random_matrix(3, 5, rng);
    const Tensor re = oracle::random_matrix(3, 3, rng);

    const auto out = crl::forward(m, x);
    const auto g = crl::backward(out.cache, ra, re);
    auto params = m.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto numeric = oracle::numeric_gradient(params[k]->data(), [&] { return projected_loss(m, x, ra, re); });
      CHECK_MESSAGE(oracle::max_rel_error(g.tensors[k].data(), numeric) < 1e-4, m.parameter_name(k));
    }
    ++checked;
  }
}

TEST_CASE("backward rejects mismatched gradients") {
  std::mt19937_64 rng(19);
  ModelState m = random_model(5, {7}, 3, 4, 20);
  const auto out = crl::forward(m, oracle::random_matrix(6, 5, rng));
  CHECK_THROWS_AS(crl::backward(out.cache, Tensor::matrix(6, 3), Tensor::matrix(6, 3)), crl::ShapeError);
  CHECK_THROWS_AS(crl::backward(out.cache, Tensor::matrix(6, 4), Tensor::matrix(5, 3)), crl::ShapeError);
}

TEST_CASE("Glorot initialization bounds and zero biases") {
  std::mt19937_64 rng(21);
  ModelState m = ModelState::random({10, {20}, 6}, 4, rng);
  const double b0 = std::sqrt(6.0 / 30.0);
  for (double v : m.layers()[0].weight.data()) CHECK(std::abs(v) <= b0);
  for (double v : m.layers()[0].bias.data()) CHECK(v == 0.0);
  const double bc = std::sqrt(6.0 / 10.0);
  for (double v : m.classifier().data()) CHECK(std::abs(v) <= bc);
  CHECK(m.layers()[0].relu);
  CHECK_FALSE(m.layers()[1].relu);
}

TEST_CASE("same seed gives a bitwise-identical model") {
  std::mt19937_64 a(5), b(5);
  CHECK(ModelState::random({8, {16}, 4}, 3, a) == ModelState::random({8, {16}, 4}, 3, b));
}

TEST_CASE("append_classes keeps old columns bitwise") {
  ModelState m = random_model(4, {5}, 3, 10, 22);
  const ModelState before = m;
  std::mt19937_64 rng(23);
  m.append_classes(10, rng);
  CHECK(m.class_count() == 20);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 10; ++c) CHECK(m.classifier()(r, c) == before.classifier()(r, c));
  CHECK(m.layers() == before.layers());
}

TEST_CASE("ModelState validates the layer chain") {
  CHECK_THROWS_AS(ModelState({DenseLayer{Tensor::matrix(2, 3), Tensor({3}), true}}, Tensor::matrix(4, 2)),
                  crl::ShapeError);
  CHECK_THROWS_AS(ModelState({DenseLayer{Tensor::matrix(2, 3), Tensor({2}), true}}, Tensor::matrix(3, 2)),
                  crl::ShapeError);
}
