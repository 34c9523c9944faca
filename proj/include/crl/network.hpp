#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

/// Layer widths of the embedding MLP: input -> hidden... -> embedding.
/// Hidden layers use ReLU; the embedding layer is linear.
struct NetworkShape {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden{256};
  std::size_t embed_dim = 32;

  void validate() const;
  bool operator==(const NetworkShape&) const = default;
};

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  bool relu = false;

  bool operator==(const DenseLayer&) const = default;
};

/// Embedding network parameters plus the classifier matrix covering every
/// class seen so far. Activations are embeddings x classifier.
class ModelState {
 public:
  ModelState() = default;
  ModelState(std::vector<DenseLayer> layers, Tensor classifier);

  /// Fresh model with Glorot-uniform weights and zero biases.
  static ModelState random(const NetworkShape& shape, std::size_t class_count, std::mt19937_64& rng);

  /// Appends `count` freshly initialized classifier columns after the existing ones.
  void append_classes(std::size_t count, std::mt19937_64& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  const Tensor& classifier() const { return classifier_; }

  std::size_t input_dim() const;
  std::size_t embed_dim() const { return classifier_.rows(); }
  std::size_t class_count() const { return class_count_; }
  std::size_t parameter_tensor_count() const { return layers_.size() * 2 + 1; }

  /// Parameter tensors in a fixed order: w0, b0, w1, b1, ..., classifier.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::string parameter_name(std::size_t index) const;

  /// Throws ShapeError if the layer chain or classifier dimensions disagree.
  void validate() const;

  bool operator==(const ModelState&) const = default;

 private:
  std::vector<DenseLayer> layers_;
  Tensor classifier_;  // [embed_dim x class_count]
  std::size_t class_count_ = 0;
};

/// Gradients shaped like ModelState::parameters().
struct GradientSet {
  std::vector<Tensor> tensors;

  static GradientSet zeros_like(const ModelState& model);
  bool operator==(const GradientSet&) const = default;
};

/// Intermediates of one forward pass. Holds a pointer to the model, which must
/// outlive the cache and stay unmodified until backward() has run.
struct ForwardCache {
  const ModelState* model = nullptr;
  std::vector<Tensor> inputs;       // input to each layer
  std::vector<Tensor> pre_activations;
  Tensor embeddings;
};

struct ForwardResult {
  Tensor embeddings;   // [n x embed_dim]
  Tensor activations;  // [n x class_count]
  ForwardCache cache;
};

ForwardResult forward(const ModelState& model, const Tensor& batch);

/// Embeddings only; no cache is kept.
Tensor embed(const ModelState& model, const Tensor& batch);

/// Gradients of a scalar loss given its partials with respect to the
/// activations and the embeddings. Both paths are summed.
GradientSet backward(const ForwardCache& cache, const Tensor& activation_grads,
                     const Tensor& embedding_grads);

}  // namespace crl
