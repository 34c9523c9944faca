#include "crl/network.hpp"

#include <cmath>

#include "crl/error.hpp"

namespace crl {

namespace {

void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

}  // namespace

void NetworkShape::validate() const {
  if (input_dim == 0 || embed_dim == 0) throw ConfigError("network dimensions must be positive");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("hidden layer width must be positive");
  }
}

ModelState::ModelState(std::vector<DenseLayer> layers, Tensor classifier)
    : layers_(std::move(layers)), classifier_(std::move(classifier)), class_count_(classifier_.cols()) {
  validate();
}

ModelState ModelState::random(const NetworkShape& shape, std::size_t class_count, std::mt19937_64& rng) {
  shape.validate();
  if (class_count == 0) throw ConfigError("model needs at least one class");
  std::vector<std::size_t> widths{shape.input_dim};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(shape.embed_dim);

  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    DenseLayer layer{Tensor::matrix(widths[k], widths[k + 1]), Tensor({widths[k + 1]}),
                     k + 2 < widths.size()};
    glorot_fill(layer.weight, widths[k], widths[k + 1], rng);
    layers.push_back(std::move(layer));
  }
  Tensor classifier = Tensor::matrix(shape.embed_dim, class_count);
  glorot_fill(classifier, shape.embed_dim, class_count, rng);
  return ModelState(std::move(layers), std::move(classifier));
}

void ModelState::append_classes(std::size_t count, std::mt19937_64& rng) {
  if (count == 0) return;
  const std::size_t rows = embed_dim();
  const std::size_t total = class_count_ + count;
  Tensor fresh = Tensor::matrix(rows, count);
  glorot_fill(fresh, rows, total, rng);
  Tensor grown = Tensor::matrix(rows, total);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < class_count_; ++c) grown(r, c) = classifier_(r, c);
    for (std::size_t c = 0; c < count; ++c) grown(r, class_count_ + c) = fresh(r, c);
  }
  classifier_ = std::move(grown);
  class_count_ = total;
}

std::size_t ModelState::input_dim() const {
  return layers_.empty() ? classifier_.rows() : layers_.front().weight.rows();
}

std::vector<Tensor*> ModelState::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&classifier_);
  return out;
}

std::vector<const Tensor*> ModelState::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&classifier_);
  return out;
}

std::string ModelState::parameter_name(std::size_t index) const {
  if (index == layers_.size() * 2) return "classifier";
  return "layer" + std::to_string(index / 2) + (index % 2 ? ".bias" : ".weight");
}

void ModelState::validate() const {
  if (classifier_.rank() != 2) throw ShapeError("classifier must be rank 2, got " + classifier_.shape_string());
  std::size_t dim = layers_.empty() ? classifier_.rows() : layers_.front().weight.rows();
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    if (l.weight.rank() != 2 || l.weight.rows() != dim) {
      throw ShapeError("layer " + std::to_string(k) + " weight " + l.weight.shape_string() +
                       " does not accept input dim " + std::to_string(dim));
    }
    if (l.bias.rank() != 1 || l.bias.size() != l.weight.cols()) {
      throw ShapeError("layer " + std::to_string(k) + " bias " + l.bias.shape_string() +
                       " does not match weight " + l.weight.shape_string());
    }
    dim = l.weight.cols();
  }
  if (classifier_.rows() != dim) {
    throw ShapeError("classifier " + classifier_.shape_string() + " does not match embedding dim " +
                     std::to_string(dim));
  }
  if (classifier_.cols() != class_count_) throw ShapeError("classifier column count != class count");
}

GradientSet GradientSet::zeros_like(const ModelState& model) {
  GradientSet g;
  for (const Tensor* p : model.parameters()) g.tensors.emplace_back(p->shape(), 0.0);
  return g;
}

ForwardResult forward(const ModelState& model, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != model.input_dim()) {
    throw ShapeError("forward: batch " + batch.shape_string() + " does not match model input dim " +
                     std::to_string(model.input_dim()));
  }
  ForwardResult result;
  result.cache.model = &model;
  Tensor h = batch;
  for (const auto& layer : model.layers()) {
    result.cache.inputs.push_back(h);
    Tensor z = matmul(h, layer.weight);
    const std::size_t out = z.cols();
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t j = 0; j < out; ++j) z(i, j) += layer.bias[j];
    }
    result.cache.pre_activations.push_back(z);
    if (layer.relu) {
      for (double& v : z.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
    }
    h = std::move(z);
  }
  result.activations = matmul(h, model.classifier());
  result.cache.embeddings = h;
  result.embeddings = std::move(h);
  require_finite(result.activations, "forward activations");
  return result;
}

Tensor embed(const ModelState& model, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != model.input_dim()) {
    throw ShapeError("embed: batch " + batch.shape_string() + " does not match model input dim " +
                     std::to_string(model.input_dim()));
  }
  Tensor h = batch;
  for (const auto& layer : model.layers()) {
    Tensor z = matmul(h, layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t j = 0; j < z.cols(); ++j) {
        const double v = z(i, j) + layer.bias[j];
        z(i, j) = layer.relu && v < 0.0 ? 0.0 : v;
      }
    }
    h = std::move(z);
  }
  require_finite(h, "embeddings");
  return h;
}

GradientSet backward(const ForwardCache& cache, const Tensor& activation_grads,
                     const Tensor& embedding_grads) {
  if (cache.model == nullptr) throw ShapeError("backward: cache has no model");
  const ModelState& model = *cache.model;
  const Tensor& emb = cache.embeddings;
  if (activation_grads.rank() != 2 || activation_grads.rows() != emb.rows() ||
      activation_grads.cols() != model.class_count()) {
    throw ShapeError("backward: activation grads " + activation_grads.shape_string() +
                     " do not match activations [" + std::to_string(emb.rows()) + " x " +
                     std::to_string(model.class_count()) + "]");
  }
  if (embedding_grads.shape() != emb.shape()) shape_mismatch("backward: embedding grads", embedding_grads, emb);
  if (cache.inputs.size() != model.layers().size()) throw ShapeError("backward: cache/model layer count mismatch");

  GradientSet grads;
  grads.tensors.resize(model.parameter_tensor_count());
  grads.tensors.back() = matmul_tn(emb, activation_grads);

  Tensor upstream = matmul_nt(activation_grads, model.classifier());
  for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] += embedding_grads[i];

  for (std::size_t k = model.layers().size(); k-- > 0;) {
    const auto& layer = model.layers()[k];
    if (layer.relu) {
      const Tensor& z = cache.pre_activations[k];
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        if (z[i] <= 0.0) upstream[i] = 0.0;
      }
    }
    grads.tensors[2 * k] = matmul_tn(cache.inputs[k], upstream);
    Tensor bias_grad({layer.bias.size()});
    for (std::size_t i = 0; i < upstream.rows(); ++i) {
      for (std::size_t j = 0; j < upstream.cols(); ++j) bias_grad[j] += upstream(i, j);
    }
    grads.tensors[2 * k + 1] = std::move(bias_grad);
    if (k > 0) upstream = matmul_nt(upstream, layer.weight);
  }
  for (std::size_t i = 0; i < grads.tensors.size(); ++i) {
    require_finite(grads.tensors[i], "gradient of " + model.parameter_name(i));
  }
  return grads;
}

}  // namespace crl
