#include "nap/mlp.hpp"

#include <cmath>

namespace nap {

namespace {

const double kBelowOne = std::nextafter(1.0, 0.0);

void apply_activation(Matrix& m, Activation a) {
  switch (a) {
    case Activation::identity:
      break;
    case Activation::relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::tanh:
      // tanh rounds to exactly +-1 past |x| ~ 19; keep the open interval
      m = m.array().tanh().cwiseMin(kBelowOne).cwiseMax(-kBelowOne).matrix();
      break;
  }
}

// Multiplies the cotangent in place by the activation derivative, expressed through the
// activation's output.
void apply_activation_grad(Matrix& cot, const Matrix& out, Activation a) {
  switch (a) {
    case Activation::identity:
      break;
    case Activation::relu:
      cot = (out.array() > 0.0).select(cot, 0.0);
      break;
    case Activation::tanh:
      cot.array() *= 1.0 - out.array().square();
      break;
  }
}

}  // namespace

std::vector<std::span<const double>> Gradients::blocks() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back(weights[i].data(), static_cast<std::size_t>(weights[i].size()));
    out.emplace_back(biases[i].data(), static_cast<std::size_t>(biases[i].size()));
  }
  return out;
}

void Gradients::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

Gradients& Gradients::operator+=(const Gradients& other) {
  require_shape(weights.size() == other.weights.size(), "gradient layer count mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] += other.weights[i];
    biases[i] += other.biases[i];
  }
  return *this;
}

Mlp::Mlp(std::vector<std::size_t> layer_dims, Activation output_activation)
    : dims_(std::move(layer_dims)) {
  require_shape(dims_.size() >= 2, "mlp needs at least input and output dims");
  for (auto d : dims_) require_shape(d > 0, "mlp layer dims must be positive");
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    DenseLayer layer;
    layer.weight = Matrix::Zero(static_cast<Eigen::Index>(dims_[i + 1]),
                                static_cast<Eigen::Index>(dims_[i]));
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(dims_[i + 1]));
    layer.activation = (i + 2 == dims_.size()) ? output_activation : Activation::relu;
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::glorot(std::vector<std::size_t> layer_dims, Activation output_activation,
                std::mt19937_64& rng, double output_gain) {
  Mlp net(std::move(layer_dims), output_activation);
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    auto& w = net.layers_[i].weight;
    const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-a, a);
    const double gain = (i + 1 == net.layers_.size()) ? output_gain : 1.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) w.data()[j] = gain * u(rng);
  }
  return net;
}

Mlp Mlp::from_layers(std::vector<DenseLayer> layers) {
  require_shape(!layers.empty(), "mlp needs at least one layer");
  Mlp net;
  net.dims_.push_back(static_cast<std::size_t>(layers.front().weight.cols()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    require_shape(l.weight.rows() > 0 && l.weight.cols() > 0, "empty layer");
    require_shape(static_cast<std::size_t>(l.weight.cols()) == net.dims_.back(),
                  "layer " + std::to_string(i) + " input width does not chain");
    require_shape(l.bias.size() == l.weight.rows(), "bias length mismatch");
    if (i + 1 < layers.size())
      require_shape(l.activation == Activation::relu, "hidden layers must use relu");
    net.dims_.push_back(static_cast<std::size_t>(l.weight.rows()));
  }
  net.layers_ = std::move(layers);
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vector Mlp::forward(const Vector& input) const {
  require_shape(static_cast<std::size_t>(input.size()) == input_dim(),
                "mlp input length " + std::to_string(input.size()) + " != " +
                    std::to_string(input_dim()));
  Matrix batch = input.transpose();
  return forward(batch).row(0).transpose();
}

Matrix Mlp::forward(const Matrix& batch) const {
  require_shape(static_cast<std::size_t>(batch.cols()) == input_dim(), "mlp batch width mismatch");
  Matrix h = batch;
  for (const auto& l : layers_) {
    Matrix next = h * l.weight.transpose();
    next.rowwise() += l.bias.transpose();
    apply_activation(next, l.activation);
    h = std::move(next);
  }
  return h;
}

Matrix Mlp::forward(const Matrix& batch, Tape& tape) const {
  require_shape(static_cast<std::size_t>(batch.cols()) == input_dim(), "mlp batch width mismatch");
  tape.activations.resize(layers_.size() + 1);
  tape.activations[0] = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    Matrix next = tape.activations[i] * l.weight.transpose();
    next.rowwise() += l.bias.transpose();
    apply_activation(next, l.activation);
    tape.activations[i + 1] = std::move(next);
  }
  return tape.activations.back();
}

Gradients Mlp::backward(const Tape& tape, const Matrix& output_cotangent,
                        Matrix* input_cotangent) const {
  require_shape(tape.activations.size() == layers_.size() + 1, "tape does not match network");
  require_shape(static_cast<std::size_t>(output_cotangent.cols()) == output_dim() &&
                    output_cotangent.rows() == tape.activations[0].rows(),
                "cotangent shape mismatch");
  Gradients g = zero_gradients();
  Matrix cot = output_cotangent;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    apply_activation_grad(cot, tape.activations[i + 1], l.activation);
    g.weights[i].noalias() = cot.transpose() * tape.activations[i];
    g.biases[i] = cot.colwise().sum().transpose();
    if (i > 0 || input_cotangent != nullptr) {
      Matrix prev = cot * l.weight;
      cot = std::move(prev);
    }
  }
  if (input_cotangent != nullptr) *input_cotangent = std::move(cot);
  return g;
}

Mlp::InputAndParamGrads Mlp::backward(const Vector& input, const Vector& output_cotangent) const {
  require_shape(static_cast<std::size_t>(input.size()) == input_dim(), "mlp input length mismatch");
  require_shape(static_cast<std::size_t>(output_cotangent.size()) == output_dim(),
                "cotangent length mismatch");
  Tape tape;
  forward(Matrix(input.transpose()), tape);
  Matrix in_cot;
  InputAndParamGrads out;
  out.params = backward(tape, Matrix(output_cotangent.transpose()), &in_cot);
  out.input = in_cot.row(0).transpose();
  return out;
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.weights.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.biases.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

std::vector<std::span<double>> Mlp::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

}  // namespace nap
