// Independent reference implementations used by the tests. Nothing here calls
// into the library code it is checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "crl/tensor.hpp"

namespace oracle {

inline crl::Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  crl::Tensor t = crl::Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Plain triple loop in extended precision.
inline std::vector<long double> matmul_ld(const std::vector<long double>& a, const std::vector<long double>& b,
                                          std::size_t m, std::size_t k, std::size_t n) {
  std::vector<long double> out(m * n, 0.0L);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0.0L;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
  return out;
}

inline std::vector<long double> widen(const crl::Tensor& t) { return {t.data().begin(), t.data().end()}; }

// log(sum(exp(x))) in extended precision.
inline long double log_sum_exp(const std::vector<long double>& x) {
  long double m = *std::max_element(x.begin(), x.end());
  long double s = 0.0L;
  for (auto v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<long double> softmax_ld(const std::vector<double>& a, long double temperature) {
  std::vector<long double> z;
  for (double v : a) z.push_back(static_cast<long double>(v) / temperature);
  const long double lse = log_sum_exp(z);
  std::vector<long double> p;
  for (auto v : z) p.push_back(std::exp(v - lse));
  return p;
}

inline long double kl_ld(const std::vector<long double>& p, const std::vector<long double>& q) {
  long double d = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0L) d += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return d;
}

inline long double entropy_ld(const std::vector<long double>& p) {
  long double h = 0.0L;
  for (auto v : p) {
    if (v > 0.0L) h -= v * std::log(v);
  }
  return h;
}

// Central difference of f with respect to every entry of x (x is restored).
inline std::vector<double> numeric_gradient(std::vector<double>& x, const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest elementwise |a - b| / max(|a|, |b|, floor). The floor keeps
// near-zero entries from turning rounding noise into huge ratios.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Brute-force retrieval: for every query, scan all gallery entries and count.
struct Retrieval {
  double top1 = 0.0;
  double mean_ap = 0.0;
  std::size_t evaluated = 0;
};

inline Retrieval brute_force_retrieval(const crl::Tensor& q, const std::vector<std::size_t>& q_id,
                                       const std::vector<std::size_t>& q_cam, const crl::Tensor& g,
                                       const std::vector<std::size_t>& g_id, const std::vector<std::size_t>& g_cam) {
  Retrieval r;
  double top1 = 0.0, ap_sum = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < g.rows(); ++j) {
      if (g_id[j] == q_id[i] && g_cam[j] == q_cam[i]) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < q.cols(); ++k) s += (q(i, k) - g(j, k)) * (q(i, k) - g(j, k));
      cand.push_back({std::sqrt(s), j});
    }
    // Rank of an entry = 1 + number of entries strictly closer or equally close with a lower index.
    std::size_t relevant_total = 0;
    for (auto& c : cand) relevant_total += g_id[c.second] == q_id[i];
    if (relevant_total == 0) continue;
    ++r.evaluated;
    std::vector<std::size_t> relevant_ranks;
    for (auto& c : cand) {
      if (g_id[c.second] != q_id[i]) continue;
      std::size_t rank = 1;
      for (auto& o : cand) {
        if (o.first < c.first || (o.first == c.first && o.second < c.second)) ++rank;
      }
      relevant_ranks.push_back(rank);
    }
    std::sort(relevant_ranks.begin(), relevant_ranks.end());
    if (relevant_ranks.front() == 1) top1 += 1.0;
    double ap = 0.0;
    for (std::size_t h = 0; h < relevant_ranks.size(); ++h) ap += static_cast<double>(h + 1) / relevant_ranks[h];
    ap_sum += ap / static_cast<double>(relevant_ranks.size());
  }
  if (r.evaluated) {
    r.top1 = top1 / static_cast<double>(r.evaluated);
    r.mean_ap = ap_sum / static_cast<double>(r.evaluated);
  }
  return r;
}


// A random query/gallery instance with at most 50 entries in total and at
// least one evaluable query. The
// integer grid makes exact distance ties common.
struct RetrievalInstance {
  crl::Tensor q, g;
  std::vector<std::size_t> q_id, q_cam, g_id, g_cam;
};

inline RetrievalInstance random_retrieval_instance(std::mt19937_64& rng, bool integer_grid) {
  RetrievalInstance r;
  const std::size_t nq = 1 + rng() % 15, ng = 2 + rng() % 34, d = 1 + rng() % 6;
  const std::size_t ids = 1 + rng() % 6, cams = 1 + rng() % 3;
  r.q = random_matrix(nq, d, rng);
  r.g = random_matrix(ng, d, rng);
  if (integer_grid) {
    for (double& v : r.q.data()) v = std::round(v * 2.0);
    for (double& v : r.g.data()) v = std::round(v * 2.0);
  }
  for (std::size_t i = 0; i < nq; ++i) r.q_id.push_back(rng() % ids), r.q_cam.push_back(rng() % cams);
  for (std::size_t j = 0; j < ng; ++j) r.g_id.push_back(rng() % ids), r.g_cam.push_back(rng() % cams);
  // At least one query keeps a relevant entry after the same-camera exclusion.
  r.g_id[rng() % ng] = r.q_id[0];
  for (std::size_t j = 0; j < ng; ++j)
    if (r.g_id[j] == r.q_id[0]) r.g_cam[j] = cams;
  return r;
}

// Threshold scan by exhaustive evaluation of every candidate in ascending order;
// the first best candidate wins.
inline double brute_force_threshold(const std::vector<double>& dist, const std::vector<bool>& genuine) {
  std::vector<double> v = dist;
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> cand{v.front()};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) cand.push_back(0.5 * (v[i] + v[i + 1]));
  cand.push_back(std::nextafter(v.back(), INFINITY));
  double best = cand.front();
  std::size_t best_right = 0;
  for (std::size_t c = 0; c < cand.size(); ++c) {
    std::size_t right = 0;
    for (std::size_t i = 0; i < dist.size(); ++i) right += (dist[i] < cand[c]) == genuine[i];
    if (c == 0 || right > best_right) best_right = right, best = cand[c];
  }
  return best;
}

}  // namespace oracle
