#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crl/error.hpp"
#include "crl/tensor.hpp"
#include "oracles.hpp"

using crl::Tensor;

TEST_CASE("construction checks the element count") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), crl::ShapeError);
  CHECK_THROWS_AS(Tensor::matrix(0, 3), crl::ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.shape_string() == "[2 x 3]");
}

TEST_CASE("rank-1 tensors act as a single row") {
  Tensor v = Tensor::vector({1, 2, 3});
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 3);
  CHECK(v.row(0)[2] == 3.0);
}

TEST_CASE("matmul of small known matrices") {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  CHECK(crl::matmul(a, b) == Tensor::from_rows({{19, 22}, {43, 50}}));
  CHECK(crl::matmul_tn(a, b) == Tensor::from_rows({{26, 30}, {38, 44}}));
  CHECK(crl::matmul_nt(a, b) == Tensor::from_rows({{17, 23}, {39, 53}}));
}

TEST_CASE("matmul rejects incompatible shapes and names both") {
  Tensor a = Tensor::matrix(2, 3);
  Tensor b = Tensor::matrix(2, 3);
  try {
    crl::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const crl::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
  }
}

TEST_CASE("matmul matches an extended-precision oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = oracle::random_matrix(7, 5, rng);
    Tensor b = oracle::random_matrix(5, 9, rng);
    const auto ref = oracle::matmul_ld(oracle::widen(a), oracle::widen(b), 7, 5, 9);
    const Tensor c = crl::matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(std::abs(c[i] - static_cast<double>(ref[i])) <= 1e-13 * (1.0 + std::abs(static_cast<double>(ref[i]))));
    }
  }
}

TEST_CASE("matmul rows do not depend on the other rows of the batch") {
  std::mt19937_64 rng(4);
  Tensor a = oracle::random_matrix(6, 8, rng);
  Tensor w = oracle::random_matrix(8, 5, rng);
  const Tensor full = crl::matmul(a, w);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const std::size_t idx[] = {r};
    const Tensor single = crl::matmul(crl::gather_rows(a, idx), w);
    for (std::size_t c = 0; c < w.cols(); ++c) CHECK(single(0, c) == full(r, c));
  }
}

TEST_CASE("l2_distance_matrix worked examples") {
  Tensor one = Tensor::from_rows({{0.3, -1.2}});
  CHECK(crl::l2_distance_matrix(one, one) == Tensor::from_rows({{0.0}}));
  Tensor a = Tensor::from_rows({{0, 0}});
  Tensor b = Tensor::from_rows({{3, 4}});
  CHECK(crl::l2_distance_matrix(a, b)(0, 0) == 5.0);
  CHECK_THROWS_AS(crl::l2_distance_matrix(Tensor::matrix(1, 2), Tensor::matrix(1, 3)), crl::ShapeError);
}

TEST_CASE("l2_distance_matrix matches a naive loop") {
  std::mt19937_64 rng(5);
  Tensor a = oracle::random_matrix(5, 16, rng);
  Tensor b = oracle::random_matrix(7, 16, rng);
  const Tensor d = crl::l2_distance_matrix(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < 16; ++k) {
        const long double diff = static_cast<long double>(a(i, k)) - b(j, k);
        s += diff * diff;
      }
      CHECK(std::abs(d(i, j) - static_cast<double>(std::sqrt(s))) < 1e-10);
    }
}

TEST_CASE("self distances have an exact zero diagonal and are symmetric") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = oracle::random_matrix(9, 12, rng, -5.0, 5.0);
    const Tensor d = crl::l2_distance_matrix(a, a);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(d(i, i) == 0.0);
      for (std::size_t j = 0; j < 9; ++j) CHECK(std::abs(d(i, j) - d(j, i)) <= 1e-12);
    }
  }
}

TEST_CASE("require_finite names the offending tensor") {
  Tensor t = Tensor::vector({1.0, NAN});
  CHECK_FALSE(crl::all_finite(t));
  try {
    crl::require_finite(t, "probe tensor");
    FAIL("expected NumericalError");
  } catch (const crl::NumericalError& e) {
    CHECK(std::string(e.what()).find("probe tensor") != std::string::npos);
  }
}

TEST_CASE("slice and gather bounds") {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(crl::slice_cols(t, 1, 3) == Tensor::from_rows({{2, 3}, {5, 6}}));
  CHECK_THROWS_AS(crl::slice_cols(t, 2, 4), crl::ShapeError);
  const std::size_t bad[] = {2};
  CHECK_THROWS_AS(crl::gather_rows(t, bad), crl::IndexError);
}
