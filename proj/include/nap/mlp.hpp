#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nap/linalg.hpp"

namespace nap {

enum class Activation : std::uint8_t { identity = 0, relu = 1, tanh = 2 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
  Activation activation = Activation::identity;
};

/// Per-layer parameter gradients, shaped like the owning Mlp.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::vector<std::span<const double>> blocks() const;
  void set_zero();
  Gradients& operator+=(const Gradients& other);
};

/// Fully connected network: relu on hidden layers, a configurable output activation.
class Mlp {
 public:
  /// Intermediate activations of a batched forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> activations;  // [0] is the input batch, [i + 1] is the output of layer i
  };

  struct InputAndParamGrads {
    Gradients params;
    Vector input;
  };

  Mlp() = default;
  /// All-zero parameters.
  Mlp(std::vector<std::size_t> layer_dims, Activation output_activation);

  /// Glorot-uniform weights, zero biases. The final layer's weights are multiplied by
  /// `output_gain`.
  static Mlp glorot(std::vector<std::size_t> layer_dims, Activation output_activation,
                    std::mt19937_64& rng, double output_gain = 1.0);

  /// Rebuilds from explicit layers; validates that consecutive shapes chain.
  static Mlp from_layers(std::vector<DenseLayer> layers);

  const std::vector<std::size_t>& layer_dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  Activation output_activation() const { return layers_.back().activation; }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  Vector forward(const Vector& input) const;
  /// Row-wise forward over a batch (n x input_dim).
  Matrix forward(const Matrix& batch) const;
  Matrix forward(const Matrix& batch, Tape& tape) const;

  /// Gradient of sum over rows of (cotangent . output) w.r.t. parameters. When
  /// `input_cotangent` is non-null it receives the gradient w.r.t. the input batch.
  Gradients backward(const Tape& tape, const Matrix& output_cotangent,
                     Matrix* input_cotangent = nullptr) const;

  InputAndParamGrads backward(const Vector& input, const Vector& output_cotangent) const;

  Gradients zero_gradients() const;
  std::vector<std::span<double>> parameter_blocks();

 private:
  std::vector<std::size_t> dims_;
  std::vector<DenseLayer> layers_;
};

}  // namespace nap
