#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

enum class Role {
  train,
  validation_query,
  validation_gallery,
  query,
  gallery,
  probe_old,
  verification_only,  // test image dropped by the query/gallery reduction
};

std::string to_string(Role r);
Role parse_role(const std::string& name);

struct IdentitySample {
  std::size_t id = 0;  // position in Benchmark::samples
  Tensor feature;      // [d_in]
  std::size_t identity = 0;
  std::size_t camera = 0;
  Role role = Role::train;
  int step = -1;  // owning learning step, -1 for test samples

  bool operator==(const IdentitySample&) const = default;
};

/// Half-open range of global class labels owned by one learning step.
struct ClassRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t c) const { return c >= begin && c < end; }
  bool operator==(const ClassRange&) const = default;
};

/// Training samples of one step. Identity ids of trained identities double as
/// global class labels.
struct StepDataset {
  std::size_t step = 0;
  ClassRange classes;
  std::vector<IdentitySample> samples;

  Tensor features() const;
  std::vector<std::size_t> labels() const;
};

struct GeneratorParams {
  std::size_t train_identities = 200;
  std::size_t test_identities = 40;
  std::size_t images_per_identity = 20;
  std::size_t feature_dim = 32;
  std::size_t camera_count = 4;
  std::size_t steps = 5;
  double image_noise = 0.1;  // per-coordinate std of per-image noise
  double camera_noise = 0.2;  // per-coordinate std of the shared camera offsets
  double validation_fraction = 0.1;
  double probe_fraction = 0.2;  // step-0 images held out for the old-class probe
  double query_fraction = 0.25;
  std::size_t verification_pairs = 3000;

  void validate() const;
  bool operator==(const GeneratorParams&) const = default;
};

struct VerificationPair {
  std::size_t first = 0;   // sample ids
  std::size_t second = 0;
  bool genuine = false;

  bool operator==(const VerificationPair&) const = default;
};

/// A complete synthetic benchmark: every sample with its role, the per-step
/// class ranges and the verification pairs (grouped into ten contiguous folds).
struct Benchmark {
  GeneratorParams params;
  std::uint64_t seed = 0;
  std::vector<IdentitySample> samples;
  std::vector<ClassRange> step_ranges;
  std::vector<VerificationPair> pairs;

  std::size_t step_count() const { return step_ranges.size(); }
  std::size_t class_count() const;
  StepDataset step(std::size_t t) const;
  std::vector<IdentitySample> with_role(Role role) const;
  std::vector<std::size_t> test_identities() const;
  std::vector<std::size_t> train_identities() const;

  bool operator==(const Benchmark&) const = default;
};

Benchmark generate(const GeneratorParams& params, std::uint64_t seed);

struct ReducedSets {
  std::vector<IdentitySample> query;
  std::vector<IdentitySample> gallery;
};

/// Drops gallery-only identities, then keeps at most one image per
/// (identity, camera) in the query and in the gallery independently.
ReducedSets reduce_test_set(const std::vector<IdentitySample>& query_pool,
                            const std::vector<IdentitySample>& gallery_pool, std::uint64_t seed);

/// Manifest / feature / index / pair files under `dir`.
void save_benchmark(const Benchmark& b, const std::filesystem::path& dir);
Benchmark load_benchmark(const std::filesystem::path& dir);

/// Checksum over the serialized data files (features, index, pairs).
std::uint32_t benchmark_checksum(const Benchmark& b);

inline constexpr int kBenchmarkFormatVersion = 1;

}  // namespace crl
