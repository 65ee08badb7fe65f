#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nap/adam.hpp"
#include "nap/linalg.hpp"
#include "nap/mlp.hpp"

namespace nap {

/// Affine coupling bijection. Coordinates in `identity` pass through; the rest are
/// scaled by exp(s(x_identity)) and shifted by t(x_identity).
class CouplingLayer {
 public:
  struct Grads {
    Gradients scale;
    Gradients translate;
  };

  /// Batched intermediate state for backprop through to_latent().
  struct Tape {
    Matrix input;
    Matrix scale_out;
    Mlp::Tape scale_tape;
    Mlp::Tape translate_tape;
  };

  CouplingLayer() = default;
  CouplingLayer(std::size_t dim, std::vector<int> identity, Mlp scale_net, Mlp translate_net);

  std::size_t dim() const { return dim_; }
  const std::vector<int>& identity_indices() const { return identity_; }
  const std::vector<int>& transformed_indices() const { return transformed_; }
  const Mlp& scale_net() const { return scale_; }
  const Mlp& translate_net() const { return translate_; }
  Mlp& scale_net() { return scale_; }
  Mlp& translate_net() { return translate_; }

  /// Data-to-latent direction: v' = v on the identity set, v * exp(s) + t elsewhere.
  /// Returns v' and log|det dv'/dv| = sum of s.
  std::pair<Vector, double> to_latent(const Vector& v) const;
  /// Exact inverse of to_latent().
  Vector to_data(const Vector& v_prime) const;

  /// Row-wise to_latent(); adds each row's log-det into `log_det`.
  Matrix to_latent(const Matrix& v, Vector& log_det, Tape* tape = nullptr) const;
  Matrix to_data(const Matrix& v_prime) const;

  /// Given d(loss)/d(output) and d(loss)/d(log_det) per row, accumulates parameter
  /// gradients and returns d(loss)/d(input).
  Matrix backward(const Tape& tape, const Matrix& output_cotangent,
                  const Vector& log_det_cotangent, Grads& grads) const;

 private:
  std::size_t dim_ = 0;
  std::vector<int> identity_;
  std::vector<int> transformed_;
  Mlp scale_;
  Mlp translate_;
};

/// Frozen diagonal affine pre-transform: x_std = (x - shift) / scale.
struct Standardizer {
  Vector shift;
  Vector scale;

  static Standardizer identity(std::size_t dim);
  /// Sample mean and unbiased std, with the std floored at 1e-8. Columns that hit the
  /// floor are listed in `degenerate` when non-null.
  static Standardizer from_samples(const Matrix& samples, std::vector<int>* degenerate = nullptr);

  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& x_std) const;
  double log_inv_scale_sum() const;
};

struct FlowArch {
  std::size_t layers = 3;
  std::vector<std::size_t> hidden = {256, 256};
};

struct TrainConfig {
  long iterations = 1000;
  double learning_rate = 1e-4;
  std::size_t batch_size = 512;
  std::uint64_t seed = 0;
  long checkpoint_every = 100;
};

/// Real NVP density over R^D with a standard normal base.
class FlowModel {
 public:
  using Grads = std::vector<CouplingLayer::Grads>;

  FlowModel() = default;
  FlowModel(std::size_t dim, std::vector<CouplingLayer> layers, Standardizer standardizer);

  /// Alternating even/odd masks, Glorot-initialized nets. The last layer of every
  /// network is scaled by `output_gain` so the initial flow is close to the identity.
  static FlowModel random(std::size_t dim, const FlowArch& arch, Standardizer standardizer,
                          std::mt19937_64& rng, double output_gain = 0.01);

  std::size_t dim() const { return dim_; }
  std::size_t num_layers() const { return layers_.size(); }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  std::vector<CouplingLayer>& mutable_layers() { return layers_; }
  const Standardizer& standardizer() const { return standardizer_; }

  double log_prob(const Vector& theta) const;
  Vector log_prob(const Matrix& thetas) const;
  /// Supremum of log_prob over R^D implied by the tanh-bounded scale nets.
  double log_prob_upper_bound() const;

  Matrix sample(std::size_t n, std::mt19937_64& rng) const;

  /// Mean negative log-likelihood over rows.
  double mean_nll(const Matrix& thetas) const;
  /// Mean NLL over rows of an already-standardized batch, with its parameter gradient.
  double mean_nll_and_grad(const Matrix& standardized, Grads& grads) const;

  Grads zero_grads() const;
  std::vector<std::span<double>> parameter_blocks();
  static std::vector<std::span<const double>> gradient_blocks(const Grads& grads);
  std::size_t parameter_count() const;

 private:
  // Latent image of standardized inputs plus the accumulated coupling log-dets.
  Matrix standardized_to_latent(const Matrix& x_std, Vector& log_det,
                                std::vector<CouplingLayer::Tape>* tapes) const;

  std::size_t dim_ = 0;
  std::vector<CouplingLayer> layers_;
  Standardizer standardizer_;
};

/// Identity-index sets: evens on even layers, odds on odd layers.
std::vector<int> coupling_mask(std::size_t dim, std::size_t layer_index);

class UnsupportedDimension : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FitReport {
  FlowModel model;
  std::vector<long> checkpoint_iterations;
  std::vector<double> checkpoint_nll;  // full training-set mean NLL
  long selected_iteration = 0;
  std::vector<std::string> warnings;
};

/// Maximum-likelihood fit by mini-batch ADAM. Returns the checkpoint with the lowest
/// training NLL, so the result is never worse than the initial model.
FitReport fit_flow(const Matrix& samples, const FlowArch& arch, const TrainConfig& cfg);

// Binary format "NVP1"; see README for the layout.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::vector<std::uint8_t> serialize(const FlowModel& model);
FlowModel deserialize(std::span<const std::uint8_t> bytes);
/// Byte length serialize() would produce for this architecture.
std::size_t serialized_size(std::size_t dim, const FlowArch& arch);

}  // namespace nap
