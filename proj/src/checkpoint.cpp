#include "crl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "crl/error.hpp"

namespace crl {

namespace {

constexpr char kMagic[4] = {'C', 'R', 'L', 'M'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void f64(double v) { little_endian(std::bit_cast<std::uint64_t>(v), 8); }
  void tensor(const Tensor& t) {
    for (double v : t.data()) f64(v);
  }
  const std::string& bytes() const { return bytes_; }
  std::string& bytes() { return bytes_; }

 private:
  void little_endian(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) bytes_.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
  }
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  double f64() { return std::bit_cast<double>(take(8)); }
  void fill(Tensor& t) {
    for (double& v : t.data()) v = f64();
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::string raw(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::uint64_t take(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) throw DataError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

// Guards allocations driven by file contents.
constexpr std::uint64_t kMaxDim = 1u << 24;

std::size_t checked_dim(std::uint64_t v) {
  if (v == 0 || v > kMaxDim) throw DataError("checkpoint has implausible dimension " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::filesystem::path& path, const std::string& sidecar_json) {
  Writer w;
  w.bytes().append(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) {
    w.u64(l.weight.rows());
    w.u64(l.weight.cols());
    w.u8(l.relu ? 1 : 0);
  }
  w.u64(model.embed_dim());
  w.u64(model.class_count());
  for (const auto& l : model.layers()) {
    w.tensor(l.weight);
    w.tensor(l.bias);
  }
  w.tensor(model.classifier());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  std::ofstream side(path.string() + ".json", std::ios::trunc);
  if (!side) throw DataError("cannot write checkpoint sidecar for " + path.string());
  side << sidecar_json << '\n';
  if (!out || !side) throw DataError("short write to checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.raw(4) != std::string(kMagic, 4)) throw DataError(path.string() + " is not a CRLM checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t layer_count = r.u32();
  if (layer_count > 1024) throw DataError("checkpoint has implausible layer count");
  std::vector<DenseLayer> layers;
  for (std::uint32_t k = 0; k < layer_count; ++k) {
    const std::size_t in_dim = checked_dim(r.u64());
    const std::size_t out_dim = checked_dim(r.u64());
    const bool relu = r.u8() != 0;
    layers.push_back({Tensor::matrix(in_dim, out_dim), Tensor({out_dim}), relu});
  }
  const std::size_t embed_dim = checked_dim(r.u64());
  const std::size_t classes = checked_dim(r.u64());
  for (auto& l : layers) {
    r.fill(l.weight);
    r.fill(l.bias);
  }
  Tensor classifier = Tensor::matrix(embed_dim, classes);
  r.fill(classifier);
  if (!r.done()) throw DataError("trailing bytes in checkpoint " + path.string());
  ModelState model(std::move(layers), std::move(classifier));
  for (const Tensor* p : model.parameters()) require_finite(*p, "checkpoint parameters");
  return model;
}

}  // namespace crl
