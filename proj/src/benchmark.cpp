#include "crl/benchmark.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crl/error.hpp"

namespace crl {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kFeatureFile = "features.bin";
constexpr const char* kIndexFile = "index.csv";
constexpr const char* kPairFile = "pairs.csv";

std::vector<double> unit_gaussian(std::size_t dim, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng) * scale;
  return v;
}

void normalize(std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (norm == 0.0) throw DataError("degenerate zero-norm feature vector");
  for (double& x : v) x /= norm;
}

std::size_t rounded(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

// Bytes of the feature matrix as little-endian doubles.
std::string feature_bytes(const Benchmark& b) {
  std::string out;
  out.reserve(b.samples.size() * b.params.feature_dim * sizeof(double));
  for (const auto& s : b.samples) {
    for (double v : s.feature.data()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xffu));
    }
  }
  return out;
}

std::string index_text(const Benchmark& b) {
  std::ostringstream os;
  os << "sample_id,identity,camera,role,step\n";
  for (const auto& s : b.samples) {
    os << s.id << ',' << s.identity << ',' << s.camera << ',' << to_string(s.role) << ',' << s.step << '\n';
  }
  return os.str();
}

std::string pair_text(const Benchmark& b) {
  std::ostringstream os;
  os << "first,second,genuine\n";
  for (const auto& p : b.pairs) os << p.first << ',' << p.second << ',' << (p.genuine ? 1 : 0) << '\n';
  return os.str();
}

std::uint32_t crc(std::uint32_t running, const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(running, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::uint32_t checksum_of(const std::string& features, const std::string& index, const std::string& pairs) {
  std::uint32_t c = static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0));
  c = crc(c, features);
  c = crc(c, index);
  return crc(c, pairs);
}

ordered_json params_to_json(const GeneratorParams& p) {
  ordered_json j;
  j["train_identities"] = p.train_identities;
  j["test_identities"] = p.test_identities;
  j["images_per_identity"] = p.images_per_identity;
  j["feature_dim"] = p.feature_dim;
  j["camera_count"] = p.camera_count;
  j["steps"] = p.steps;
  j["image_noise"] = p.image_noise;
  j["camera_noise"] = p.camera_noise;
  j["validation_fraction"] = p.validation_fraction;
  j["probe_fraction"] = p.probe_fraction;
  j["query_fraction"] = p.query_fraction;
  j["verification_pairs"] = p.verification_pairs;
  return j;
}

GeneratorParams params_from_json(const ordered_json& j) {
  GeneratorParams p;
  p.train_identities = j.at("train_identities").get<std::size_t>();
  p.test_identities = j.at("test_identities").get<std::size_t>();
  p.images_per_identity = j.at("images_per_identity").get<std::size_t>();
  p.feature_dim = j.at("feature_dim").get<std::size_t>();
  p.camera_count = j.at("camera_count").get<std::size_t>();
  p.steps = j.at("steps").get<std::size_t>();
  p.image_noise = j.at("image_noise").get<double>();
  p.camera_noise = j.at("camera_noise").get<double>();
  p.validation_fraction = j.at("validation_fraction").get<double>();
  p.probe_fraction = j.at("probe_fraction").get<double>();
  p.query_fraction = j.at("query_fraction").get<double>();
  p.verification_pairs = j.at("verification_pairs").get<std::size_t>();
  return p;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  return out;
}

long long parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("malformed " + what + " field '" + s + "'");
  }
}

}  // namespace

std::string to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::validation_query: return "validation_query";
    case Role::validation_gallery: return "validation_gallery";
    case Role::query: return "query";
    case Role::gallery: return "gallery";
    case Role::probe_old: return "probe_old";
    case Role::verification_only: return "verification_only";
  }
  return "unknown";
}

Role parse_role(const std::string& name) {
  for (Role r : {Role::train, Role::validation_query, Role::validation_gallery, Role::query, Role::gallery,
                 Role::probe_old, Role::verification_only}) {
    if (to_string(r) == name) return r;
  }
  throw DataError("unknown sample role '" + name + "'");
}

Tensor StepDataset::features() const {
  if (samples.empty()) throw DataError("step " + std::to_string(step) + " has no samples");
  const std::size_t d = samples.front().feature.size();
  Tensor out = Tensor::matrix(samples.size(), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& f = samples[i].feature.data();
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> StepDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.identity);
  return out;
}

void GeneratorParams::validate() const {
  if (steps == 0) throw ConfigError("steps must be >= 1");
  if (train_identities == 0 || test_identities == 0) throw ConfigError("identity counts must be positive");
  if (steps > train_identities) throw ConfigError("more steps than training identities");
  if (train_identities % steps != 0) {
    throw ConfigError("train_identities (" + std::to_string(train_identities) + ") not divisible by steps (" +
                      std::to_string(steps) + ")");
  }
  if (images_per_identity < 2) throw ConfigError("images_per_identity must be >= 2");
  if (feature_dim == 0 || camera_count == 0) throw ConfigError("feature_dim and camera_count must be positive");
  if (!(image_noise >= 0.0) || !(camera_noise >= 0.0)) throw ConfigError("noise scales must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  if (!(probe_fraction >= 0.0 && probe_fraction < 1.0)) throw ConfigError("probe_fraction must be in [0, 1)");
  if (!(query_fraction > 0.0 && query_fraction < 1.0)) throw ConfigError("query_fraction must be in (0, 1)");
  const std::size_t per_step = train_identities / steps;
  if (rounded(validation_fraction, per_step) >= per_step) {
    throw ConfigError("validation_fraction leaves no trained identity per step");
  }
  if (rounded(probe_fraction, images_per_identity) >= images_per_identity) {
    throw ConfigError("probe_fraction leaves no training image");
  }
  if (verification_pairs % 10 != 0 || verification_pairs < 20) {
    throw ConfigError("verification_pairs must be a positive multiple of 10 (>= 20)");
  }
  if (test_identities < 2) throw ConfigError("need at least 2 test identities for impostor pairs");
}

std::size_t Benchmark::class_count() const {
  return step_ranges.empty() ? 0 : step_ranges.back().end;
}

StepDataset Benchmark::step(std::size_t t) const {
  if (t >= step_ranges.size()) throw IndexError("step " + std::to_string(t) + " out of range");
  StepDataset d{t, step_ranges[t], {}};
  for (const auto& s : samples) {
    if (s.role == Role::train && s.step == static_cast<int>(t)) d.samples.push_back(s);
  }
  return d;
}

std::vector<IdentitySample> Benchmark::with_role(Role role) const {
  std::vector<IdentitySample> out;
  for (const auto& s : samples) {
    if (s.role == role) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> Benchmark::test_identities() const {
  std::set<std::size_t> ids;
  for (const auto& s : samples) {
    if (s.role == Role::query || s.role == Role::gallery || s.role == Role::verification_only) {
      ids.insert(s.identity);
    }
  }
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> Benchmark::train_identities() const {
  std::set<std::size_t> ids;
  for (const auto& s : samples) {
    if (s.role == Role::train) ids.insert(s.identity);
  }
  return {ids.begin(), ids.end()};
}

ReducedSets reduce_test_set(const std::vector<IdentitySample>& query_pool,
                            const std::vector<IdentitySample>& gallery_pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<std::size_t> query_ids;
  for (const auto& s : query_pool) query_ids.insert(s.identity);

  auto one_per_camera = [&rng](const std::vector<const IdentitySample*>& pool) {
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < pool.size(); ++i) groups[{pool[i]->identity, pool[i]->camera}].push_back(i);
    std::vector<bool> keep(pool.size(), false);
    for (const auto& [key, members] : groups) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      keep[members[pick(rng)]] = true;
    }
    std::vector<IdentitySample> out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (keep[i]) out.push_back(*pool[i]);
    }
    return out;
  };

  std::vector<const IdentitySample*> q, g;
  for (const auto& s : query_pool) q.push_back(&s);
  for (const auto& s : gallery_pool) {
    if (query_ids.count(s.identity)) g.push_back(&s);
  }
  ReducedSets out{one_per_camera(q), one_per_camera(g)};
  if (out.query.empty() || out.gallery.empty()) {
    throw DataError("benchmark too small: reduced query/gallery set is empty");
  }
  return out;
}

Benchmark generate(const GeneratorParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = params.feature_dim;
  const std::size_t steps = params.steps;
  const std::size_t per_step = params.train_identities / steps;
  const std::size_t val_per_step = rounded(params.validation_fraction, per_step);
  const std::size_t trained_per_step = per_step - val_per_step;
  const std::size_t trained_total = trained_per_step * steps;

  std::vector<std::vector<double>> cameras;
  for (std::size_t c = 0; c < params.camera_count; ++c) cameras.push_back(unit_gaussian(d, params.camera_noise, rng));

  auto draw_prototype = [&] {
    auto v = unit_gaussian(d, 1.0, rng);
    normalize(v);
    return v;
  };
  std::vector<std::vector<double>> train_protos(params.train_identities), test_protos(params.test_identities);
  for (auto& p : train_protos) p = draw_prototype();
  for (auto& p : test_protos) p = draw_prototype();

  std::vector<std::size_t> slots(params.train_identities);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::shuffle(slots.begin(), slots.end(), rng);

  Benchmark b;
  b.params = params;
  b.seed = seed;
  std::uniform_int_distribution<std::size_t> camera_pick(0, params.camera_count - 1);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto make_image = [&](std::size_t identity, const std::vector<double>& proto, Role role, int step) {
    IdentitySample s;
    s.identity = identity;
    s.camera = camera_pick(rng);
    std::vector<double> f(d);
    for (std::size_t k = 0; k < d; ++k) {
      f[k] = proto[k] + cameras[s.camera][k] + params.image_noise * noise(rng);
    }
    normalize(f);
    s.feature = Tensor::vector(std::move(f));
    s.role = role;
    s.step = step;
    return s;
  };
  auto append = [&b](IdentitySample s) {
    s.id = b.samples.size();
    b.samples.push_back(std::move(s));
  };

  const std::size_t n_probe = rounded(params.probe_fraction, params.images_per_identity);
  const std::size_t n_query = std::max<std::size_t>(1, rounded(params.query_fraction, params.images_per_identity));

  // Query pools of identities held out from training, reduced per the re-id protocol.
  auto add_held_out = [&](std::size_t identity, const std::vector<double>& proto, Role query_role,
                          Role gallery_role, std::vector<IdentitySample>& qpool, std::vector<IdentitySample>& gpool) {
    for (std::size_t k = 0; k < params.images_per_identity; ++k) {
      auto s = make_image(identity, proto, k < n_query ? query_role : gallery_role, -1);
      (k < n_query ? qpool : gpool).push_back(std::move(s));
    }
  };

  for (std::size_t t = 0; t < steps; ++t) {
    b.step_ranges.push_back({t * trained_per_step, (t + 1) * trained_per_step});
    for (std::size_t j = 0; j < trained_per_step; ++j) {
      const std::size_t identity = t * trained_per_step + j;
      const auto& proto = train_protos[slots[t * per_step + j]];
      for (std::size_t k = 0; k < params.images_per_identity; ++k) {
        const bool probe = t == 0 && k < n_probe;
        append(make_image(identity, proto, probe ? Role::probe_old : Role::train, static_cast<int>(t)));
      }
    }
  }

  std::vector<IdentitySample> vq, vg;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < val_per_step; ++j) {
      const std::size_t identity = trained_total + t * val_per_step + j;
      add_held_out(identity, train_protos[slots[t * per_step + trained_per_step + j]], Role::validation_query,
                   Role::validation_gallery, vq, vg);
    }
  }
  if (!vq.empty()) {
    auto reduced = reduce_test_set(vq, vg, rng());
    for (auto& s : reduced.query) append(std::move(s));
    for (auto& s : reduced.gallery) append(std::move(s));
  }

  const std::size_t first_test_id = trained_total + steps * val_per_step;
  std::vector<IdentitySample> tq, tg;
  for (std::size_t j = 0; j < params.test_identities; ++j) {
    add_held_out(first_test_id + j, test_protos[j], Role::query, Role::gallery, tq, tg);
  }
  // Tag pool images so the ones dropped by the reduction remain available for verification pairs.
  std::vector<IdentitySample> pool;
  for (std::size_t i = 0; i < tq.size(); ++i) tq[i].id = i;
  for (std::size_t i = 0; i < tg.size(); ++i) tg[i].id = tq.size() + i;
  pool.insert(pool.end(), tq.begin(), tq.end());
  pool.insert(pool.end(), tg.begin(), tg.end());
  auto reduced = reduce_test_set(tq, tg, rng());
  std::vector<bool> kept(pool.size(), false);
  for (const auto& s : reduced.query) kept[s.id] = true;
  for (const auto& s : reduced.gallery) kept[s.id] = true;

  std::map<std::size_t, std::vector<std::size_t>> images_of;  // identity -> sample ids
  for (std::size_t i = 0; i < pool.size(); ++i) {
    IdentitySample s = pool[i];
    if (!kept[i]) s.role = Role::verification_only;
    images_of[s.identity].push_back(b.samples.size());
    append(std::move(s));
  }

  std::vector<std::size_t> test_ids;
  for (const auto& [id, imgs] : images_of) test_ids.push_back(id);
  const std::size_t per_fold = params.verification_pairs / 10;
  std::uniform_int_distribution<std::size_t> id_pick(0, test_ids.size() - 1);
  std::uniform_int_distribution<std::size_t> img_pick(0, params.images_per_identity - 1);
  for (std::size_t fold = 0; fold < 10; ++fold) {
    std::vector<VerificationPair> fold_pairs;
    const std::size_t genuine = per_fold / 2;
    for (std::size_t k = 0; k < per_fold; ++k) {
      if (k < genuine) {
        const auto& imgs = images_of[test_ids[id_pick(rng)]];
        const std::size_t a = img_pick(rng);
        std::size_t c = img_pick(rng);
        while (c == a) c = img_pick(rng);
        fold_pairs.push_back({imgs[a], imgs[c], true});
      } else {
        const std::size_t ia = id_pick(rng);
        std::size_t ic = id_pick(rng);
        while (ic == ia) ic = id_pick(rng);
        fold_pairs.push_back({images_of[test_ids[ia]][img_pick(rng)], images_of[test_ids[ic]][img_pick(rng)], false});
      }
    }
    std::shuffle(fold_pairs.begin(), fold_pairs.end(), rng);
    b.pairs.insert(b.pairs.end(), fold_pairs.begin(), fold_pairs.end());
  }
  return b;
}

std::uint32_t benchmark_checksum(const Benchmark& b) {
  return checksum_of(feature_bytes(b), index_text(b), pair_text(b));
}

void save_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const std::string features = feature_bytes(b);
  const std::string index = index_text(b);
  const std::string pairs = pair_text(b);

  ordered_json m;
  m["format"] = "crl-benchmark";
  m["format_version"] = kBenchmarkFormatVersion;
  m["seed"] = b.seed;
  m["params"] = params_to_json(b.params);
  m["sample_count"] = b.samples.size();
  m["pair_count"] = b.pairs.size();
  ordered_json ranges = ordered_json::array();
  for (const auto& r : b.step_ranges) ranges.push_back({r.begin, r.end});
  m["step_class_ranges"] = ranges;
  m["test_identities"] = b.test_identities();
  m["checksum"] = checksum_of(features, index, pairs);

  write_file(dir / kFeatureFile, features);
  write_file(dir / kIndexFile, index);
  write_file(dir / kPairFile, pairs);
  write_file(dir / kManifestFile, m.dump(2) + "\n");
}

Benchmark load_benchmark(const std::filesystem::path& dir) {
  ordered_json m;
  try {
    m = ordered_json::parse(read_file(dir / kManifestFile));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  Benchmark b;
  std::uint32_t expected = 0;
  std::size_t sample_count = 0, pair_count = 0;
  try {
    if (m.at("format").get<std::string>() != "crl-benchmark") throw DataError("not a benchmark manifest");
    const int version = m.at("format_version").get<int>();
    if (version != kBenchmarkFormatVersion) {
      throw DataError("benchmark format version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kBenchmarkFormatVersion) + ")");
    }
    b.seed = m.at("seed").get<std::uint64_t>();
    b.params = params_from_json(m.at("params"));
    for (const auto& r : m.at("step_class_ranges")) {
      b.step_ranges.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
    }
    sample_count = m.at("sample_count").get<std::size_t>();
    pair_count = m.at("pair_count").get<std::size_t>();
    expected = m.at("checksum").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }

  const std::string features = read_file(dir / kFeatureFile);
  const std::string index = read_file(dir / kIndexFile);
  const std::string pairs = read_file(dir / kPairFile);
  if (checksum_of(features, index, pairs) != expected) {
    throw DataError("benchmark checksum mismatch in " + dir.string() + " (corrupt or truncated files)");
  }
  const std::size_t d = b.params.feature_dim;
  if (features.size() != sample_count * d * sizeof(double)) throw DataError("feature file size mismatch");

  std::istringstream is(index);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    auto f = split(line, ',');
    if (f.size() != 5) throw DataError("malformed index row '" + line + "'");
    IdentitySample s;
    s.id = static_cast<std::size_t>(parse_int(f[0], "sample_id"));
    if (s.id != b.samples.size()) throw DataError("index rows out of order");
    s.identity = static_cast<std::size_t>(parse_int(f[1], "identity"));
    s.camera = static_cast<std::size_t>(parse_int(f[2], "camera"));
    s.role = parse_role(f[3]);
    s.step = static_cast<int>(parse_int(f[4], "step"));
    std::vector<double> v(d);
    const std::size_t base = s.id * d * sizeof(double);
    for (std::size_t k = 0; k < d; ++k) {
      std::uint64_t bits = 0;
      for (int byte = 0; byte < 8; ++byte) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(features[base + k * 8 + byte])) << (8 * byte);
      }
      v[k] = std::bit_cast<double>(bits);
    }
    s.feature = Tensor::vector(std::move(v));
    b.samples.push_back(std::move(s));
  }
  if (b.samples.size() != sample_count) throw DataError("index row count mismatch");

  std::istringstream ps(pairs);
  std::getline(ps, line);
  while (std::getline(ps, line)) {
    auto f = split(line, ',');
    if (f.size() != 3) throw DataError("malformed pair row '" + line + "'");
    VerificationPair p{static_cast<std::size_t>(parse_int(f[0], "first")),
                       static_cast<std::size_t>(parse_int(f[1], "second")), parse_int(f[2], "genuine") != 0};
    if (p.first >= b.samples.size() || p.second >= b.samples.size()) throw DataError("pair references unknown sample");
    b.pairs.push_back(p);
  }
  if (b.pairs.size() != pair_count) throw DataError("pair count mismatch");
  return b;
}

}  // namespace crl
