#include "nap/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace nap {

namespace {

double log_normal_const(std::size_t dim) {
  return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
}

}  // namespace

// ---------------------------------------------------------------------------------------
// CouplingLayer

CouplingLayer::CouplingLayer(std::size_t dim, std::vector<int> identity, Mlp scale_net,
                             Mlp translate_net)
    : dim_(dim), identity_(std::move(identity)), scale_(std::move(scale_net)),
      translate_(std::move(translate_net)) {
  require_shape(dim_ >= 2, "coupling layer needs dim >= 2");
  require_shape(!identity_.empty() && identity_.size() < dim_,
                "identity set must be a proper nonempty subset");
  std::vector<bool> seen(dim_, false);
  for (int i : identity_) {
    require_shape(i >= 0 && static_cast<std::size_t>(i) < dim_, "identity index out of range");
    require_shape(!seen[static_cast<std::size_t>(i)], "duplicate identity index");
    seen[static_cast<std::size_t>(i)] = true;
  }
  require_shape(std::is_sorted(identity_.begin(), identity_.end()), "identity indices must be sorted");
  for (std::size_t i = 0; i < dim_; ++i)
    if (!seen[i]) transformed_.push_back(static_cast<int>(i));

  require_shape(scale_.input_dim() == identity_.size() && scale_.output_dim() == transformed_.size(),
                "scale net shape does not match mask");
  require_shape(translate_.input_dim() == identity_.size() &&
                    translate_.output_dim() == transformed_.size(),
                "translate net shape does not match mask");
  require_shape(scale_.output_activation() == Activation::tanh, "scale net must end in tanh");
}

std::pair<Vector, double> CouplingLayer::to_latent(const Vector& v) const {
  require_shape(static_cast<std::size_t>(v.size()) == dim_, "coupling input length mismatch");
  Vector log_det = Vector::Zero(1);
  Matrix out = to_latent(Matrix(v.transpose()), log_det);
  return {out.row(0).transpose(), log_det(0)};
}

Vector CouplingLayer::to_data(const Vector& v_prime) const {
  require_shape(static_cast<std::size_t>(v_prime.size()) == dim_, "coupling input length mismatch");
  return to_data(Matrix(v_prime.transpose())).row(0).transpose();
}

Matrix CouplingLayer::to_latent(const Matrix& v, Vector& log_det, Tape* tape) const {
  require_shape(static_cast<std::size_t>(v.cols()) == dim_, "coupling batch width mismatch");
  require_shape(log_det.size() == v.rows(), "log_det length mismatch");
  const Matrix x_id = v(Eigen::all, identity_);
  Matrix s;
  Matrix t;
  if (tape != nullptr) {
    s = scale_.forward(x_id, tape->scale_tape);
    t = translate_.forward(x_id, tape->translate_tape);
    tape->input = v;
    tape->scale_out = s;
  } else {
    s = scale_.forward(x_id);
    t = translate_.forward(x_id);
  }
  Matrix out = v;
  out(Eigen::all, transformed_) =
      (v(Eigen::all, transformed_).array() * s.array().exp() + t.array()).matrix();
  log_det += s.rowwise().sum();
  return out;
}

Matrix CouplingLayer::to_data(const Matrix& v_prime) const {
  require_shape(static_cast<std::size_t>(v_prime.cols()) == dim_, "coupling batch width mismatch");
  const Matrix x_id = v_prime(Eigen::all, identity_);
  const Matrix s = scale_.forward(x_id);
  const Matrix t = translate_.forward(x_id);
  Matrix out = v_prime;
  out(Eigen::all, transformed_) =
      ((v_prime(Eigen::all, transformed_).array() - t.array()) * (-s.array()).exp()).matrix();
  return out;
}

Matrix CouplingLayer::backward(const Tape& tape, const Matrix& output_cotangent,
                               const Vector& log_det_cotangent, Grads& grads) const {
  const Eigen::Index n = tape.input.rows();
  require_shape(output_cotangent.rows() == n && log_det_cotangent.size() == n,
                "coupling cotangent shape mismatch");
  const Matrix exp_s = tape.scale_out.array().exp().matrix();
  const Matrix g_tr = output_cotangent(Eigen::all, transformed_);

  Matrix g_in = output_cotangent;
  g_in(Eigen::all, transformed_) = (g_tr.array() * exp_s.array()).matrix();

  Matrix g_s = (g_tr.array() * tape.input(Eigen::all, transformed_).array() * exp_s.array()).matrix();
  g_s.colwise() += log_det_cotangent;

  Matrix g_x_scale;
  Matrix g_x_translate;
  grads.scale += scale_.backward(tape.scale_tape, g_s, &g_x_scale);
  grads.translate += translate_.backward(tape.translate_tape, g_tr, &g_x_translate);
  g_in(Eigen::all, identity_) += g_x_scale + g_x_translate;
  return g_in;
}

// ---------------------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::identity(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(d), Vector::Ones(d)};
}

Standardizer Standardizer::from_samples(const Matrix& samples, std::vector<int>* degenerate) {
  require_shape(samples.rows() >= 2, "standardizer needs at least two rows");
  Standardizer st;
  st.shift = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - st.shift.transpose();
  st.scale = (centered.colwise().squaredNorm() / static_cast<double>(samples.rows() - 1))
                 .cwiseSqrt()
                 .transpose();
  for (Eigen::Index j = 0; j < st.scale.size(); ++j) {
    if (!(st.scale(j) > 1e-8)) {
      st.scale(j) = 1e-8;
      if (degenerate != nullptr) degenerate->push_back(static_cast<int>(j));
    }
  }
  return st;
}

Matrix Standardizer::apply(const Matrix& x) const {
  require_shape(x.cols() == shift.size(), "standardizer width mismatch");
  return ((x.rowwise() - shift.transpose()).array().rowwise() / scale.transpose().array()).matrix();
}

Matrix Standardizer::invert(const Matrix& x_std) const {
  require_shape(x_std.cols() == shift.size(), "standardizer width mismatch");
  Matrix out = (x_std.array().rowwise() * scale.transpose().array()).matrix();
  out.rowwise() += shift.transpose();
  return out;
}

double Standardizer::log_inv_scale_sum() const {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < scale.size(); ++j) acc -= std::log(scale(j));
  return acc;
}

// ---------------------------------------------------------------------------------------
// FlowModel

std::vector<int> coupling_mask(std::size_t dim, std::size_t layer_index) {
  std::vector<int> idx;
  for (std::size_t i = layer_index % 2; i < dim; i += 2) idx.push_back(static_cast<int>(i));
  return idx;
}

FlowModel::FlowModel(std::size_t dim, std::vector<CouplingLayer> layers, Standardizer standardizer)
    : dim_(dim), layers_(std::move(layers)), standardizer_(std::move(standardizer)) {
  if (dim_ < 2) throw UnsupportedDimension("real NVP needs dim >= 2, got " + std::to_string(dim_));
  require_shape(!layers_.empty(), "flow needs at least one coupling layer");
  for (const auto& l : layers_) require_shape(l.dim() == dim_, "coupling layer dim mismatch");
  require_shape(standardizer_.shift.size() == static_cast<Eigen::Index>(dim_) &&
                    standardizer_.scale.size() == static_cast<Eigen::Index>(dim_),
                "standardizer dim mismatch");
  for (Eigen::Index j = 0; j < standardizer_.scale.size(); ++j)
    require_shape(std::isfinite(standardizer_.scale(j)) && standardizer_.scale(j) > 0.0 &&
                      std::isfinite(standardizer_.shift(j)),
                  "standardizer entries must be finite with positive scale");
}

FlowModel FlowModel::random(std::size_t dim, const FlowArch& arch, Standardizer standardizer,
                            std::mt19937_64& rng, double output_gain) {
  if (dim < 2) throw UnsupportedDimension("real NVP needs dim >= 2, got " + std::to_string(dim));
  require_shape(arch.layers >= 1, "flow needs at least one coupling layer");
  std::vector<CouplingLayer> layers;
  for (std::size_t l = 0; l < arch.layers; ++l) {
    auto identity = coupling_mask(dim, l);
    std::vector<std::size_t> dims{identity.size()};
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(dim - identity.size());
    Mlp scale = Mlp::glorot(dims, Activation::tanh, rng, output_gain);
    Mlp translate = Mlp::glorot(dims, Activation::identity, rng, output_gain);
    layers.emplace_back(dim, std::move(identity), std::move(scale), std::move(translate));
  }
  return FlowModel(dim, std::move(layers), std::move(standardizer));
}

Matrix FlowModel::standardized_to_latent(const Matrix& x_std, Vector& log_det,
                                         std::vector<CouplingLayer::Tape>* tapes) const {
  // f = f_1 o ... o f_L, so the last layer touches the data first.
  Matrix v = x_std;
  if (tapes != nullptr) tapes->resize(layers_.size());
  for (std::size_t l = layers_.size(); l-- > 0;)
    v = layers_[l].to_latent(v, log_det, tapes != nullptr ? &(*tapes)[l] : nullptr);
  return v;
}

Vector FlowModel::log_prob(const Matrix& thetas) const {
  require_shape(static_cast<std::size_t>(thetas.cols()) == dim_, "log_prob width mismatch");
  Vector log_det = Vector::Zero(thetas.rows());
  const Matrix z = standardized_to_latent(standardizer_.apply(thetas), log_det, nullptr);
  const double c = log_normal_const(dim_);
  const double lis = standardizer_.log_inv_scale_sum();
  Vector out(thetas.rows());
  // Same association order as log_prob_upper_bound(); rounding is monotone, so the
  // bound holds exactly in floating point.
  for (Eigen::Index i = 0; i < thetas.rows(); ++i) {
    const double log_pz = c - 0.5 * z.row(i).squaredNorm();
    out(i) = (log_pz + log_det(i)) + lis;
  }
  return out;
}

double FlowModel::log_prob(const Vector& theta) const {
  require_shape(static_cast<std::size_t>(theta.size()) == dim_, "log_prob length mismatch");
  return log_prob(Matrix(theta.transpose()))(0);
}

double FlowModel::log_prob_upper_bound() const {
  double scale_bound = 0.0;
  for (std::size_t l = layers_.size(); l-- > 0;)
    scale_bound += static_cast<double>(layers_[l].transformed_indices().size());
  return (log_normal_const(dim_) + scale_bound) + standardizer_.log_inv_scale_sum();
}

Matrix FlowModel::sample(std::size_t n, std::mt19937_64& rng) const {
  require_shape(n > 0, "sample count must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
  for (const auto& layer : layers_) v = layer.to_data(v);
  return standardizer_.invert(v);
}

double FlowModel::mean_nll(const Matrix& thetas) const { return -log_prob(thetas).mean(); }

double FlowModel::mean_nll_and_grad(const Matrix& standardized, Grads& grads) const {
  const Eigen::Index n = standardized.rows();
  require_shape(n > 0, "empty batch");
  grads = zero_grads();
  std::vector<CouplingLayer::Tape> tapes;
  Vector log_det = Vector::Zero(n);
  Matrix z = standardized_to_latent(standardized, log_det, &tapes);

  const double inv_n = 1.0 / static_cast<double>(n);
  const double loss = (0.5 * z.rowwise().squaredNorm().sum() - log_det.sum()) * inv_n -
                      log_normal_const(dim_) - standardizer_.log_inv_scale_sum();

  Matrix cot = z * inv_n;
  const Vector log_det_cot = Vector::Constant(n, -inv_n);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    cot = layers_[l].backward(tapes[l], cot, log_det_cot, grads[l]);
  return loss;
}

FlowModel::Grads FlowModel::zero_grads() const {
  Grads g;
  for (const auto& l : layers_)
    g.push_back({l.scale_net().zero_gradients(), l.translate_net().zero_gradients()});
  return g;
}

std::vector<std::span<double>> FlowModel::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    auto s = l.scale_net().parameter_blocks();
    auto t = l.translate_net().parameter_blocks();
    out.insert(out.end(), s.begin(), s.end());
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<std::span<const double>> FlowModel::gradient_blocks(const Grads& grads) {
  std::vector<std::span<const double>> out;
  for (const auto& g : grads) {
    auto s = g.scale.blocks();
    auto t = g.translate.blocks();
    out.insert(out.end(), s.begin(), s.end());
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::size_t FlowModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.scale_net().parameter_count() + l.translate_net().parameter_count();
  return n;
}

// ---------------------------------------------------------------------------------------
// Training

FitReport fit_flow(const Matrix& samples, const FlowArch& arch, const TrainConfig& cfg) {
  if (samples.cols() < 2)
    throw UnsupportedDimension("real NVP needs dim >= 2, got " + std::to_string(samples.cols()));
  require_shape(samples.rows() >= 2, "fit needs at least two samples");
  if (cfg.iterations <= 0) throw std::invalid_argument("iterations must be positive");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!samples.allFinite()) throw std::invalid_argument("training samples must be finite");

  FitReport report;
  std::vector<int> degenerate;
  Standardizer st = Standardizer::from_samples(samples, &degenerate);
  for (int j : degenerate)
    report.warnings.push_back("dimension " + std::to_string(j) + " is constant; scale floored at 1e-8");

  const Matrix x_std = st.apply(samples);
  std::mt19937_64 rng(cfg.seed);
  FlowModel model = FlowModel::random(static_cast<std::size_t>(samples.cols()), arch, st, rng);

  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  auto blocks = model.parameter_blocks();
  AdamState adam(opts, blocks);

  const auto n = static_cast<std::size_t>(samples.rows());
  const std::size_t batch = std::min(cfg.batch_size, n);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = n;  // forces a shuffle on the first iteration
  std::vector<Eigen::Index> idx(batch);

  // NLL is reported on the original scale; it differs from the standardized-scale loss
  // by a constant.
  double best_nll = model.mean_nll(samples);
  if (!std::isfinite(best_nll)) throw TrainingError("non-finite training NLL", 0);
  report.checkpoint_iterations.push_back(0);
  report.checkpoint_nll.push_back(best_nll);
  FlowModel best = model;
  report.selected_iteration = 0;

  FlowModel::Grads grads;
  const long every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : cfg.iterations;
  for (long it = 1; it <= cfg.iterations; ++it) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx[b] = order[cursor++];
    }
    const Matrix xb = x_std(idx, Eigen::all);
    const double loss = model.mean_nll_and_grad(xb, grads);
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss", it);
    const auto gblocks = FlowModel::gradient_blocks(grads);
    adam_step(blocks, gblocks, adam);

    if (it % every == 0 || it == cfg.iterations) {
      const double nll = model.mean_nll(samples);
      if (!std::isfinite(nll)) throw TrainingError("non-finite training NLL", it);
      report.checkpoint_iterations.push_back(it);
      report.checkpoint_nll.push_back(nll);
      if (nll < best_nll) {
        best_nll = nll;
        best = model;
        report.selected_iteration = it;
      }
    }
  }
  report.model = std::move(best);
  return report;
}

}  // namespace nap
