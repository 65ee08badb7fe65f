#include <bit>
#include <cmath>
#include <cstring>

#include "nap/flow.hpp"

namespace nap {

namespace {

constexpr char kMagic[4] = {'N', 'V', 'P', '1'};

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated payload reading ") + what, pos_);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_mlp(Writer& w, const Mlp& net) {
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.weight.rows()));
    w.u32(static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) w.f64(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias(i));
    w.u8(static_cast<std::uint8_t>(l.activation));
  }
}

// Caps applied before allocating, so a corrupt header cannot request absurd buffers.
constexpr std::uint32_t kMaxDim = 1u << 16;
constexpr std::uint32_t kMaxLayers = 1u << 12;
constexpr std::uint32_t kMaxWidth = 1u << 16;

Mlp read_mlp(Reader& r) {
  const std::size_t start = r.offset();
  const std::uint32_t count = r.u32("network layer count");
  if (count == 0 || count > kMaxLayers) throw FormatError("invalid network layer count", start);
  std::vector<DenseLayer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.offset();
    const std::uint32_t rows = r.u32("weight rows");
    const std::uint32_t cols = r.u32("weight cols");
    if (rows == 0 || cols == 0 || rows > kMaxWidth || cols > kMaxWidth)
      throw FormatError("invalid weight shape", at);
    const std::size_t payload = (static_cast<std::size_t>(rows) * cols + rows) * 8 + 1;
    r.need(payload, "dense layer payload");
    DenseLayer l;
    l.weight.resize(rows, cols);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = r.f64("weights");
    l.bias.resize(rows);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = r.f64("biases");
    const std::size_t code_at = r.offset();
    const std::uint8_t code = r.u8("activation code");
    if (code > static_cast<std::uint8_t>(Activation::tanh))
      throw FormatError("unknown activation code " + std::to_string(code), code_at);
    l.activation = static_cast<Activation>(code);
    layers.push_back(std::move(l));
  }
  try {
    return Mlp::from_layers(std::move(layers));
  } catch (const ShapeError& e) {
    throw FormatError(std::string("inconsistent network: ") + e.what(), start);
  }
}

}  // namespace

std::vector<std::uint8_t> serialize(const FlowModel& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(static_cast<std::uint32_t>(model.dim()));
  w.u32(static_cast<std::uint32_t>(model.num_layers()));
  const auto& st = model.standardizer();
  for (Eigen::Index i = 0; i < st.shift.size(); ++i) w.f64(st.shift(i));
  for (Eigen::Index i = 0; i < st.scale.size(); ++i) w.f64(st.scale(i));
  for (const auto& layer : model.layers()) {
    w.u32(static_cast<std::uint32_t>(layer.identity_indices().size()));
    for (int i : layer.identity_indices()) w.u32(static_cast<std::uint32_t>(i));
    write_mlp(w, layer.scale_net());
    write_mlp(w, layer.translate_net());
  }
  return w.take();
}

FlowModel deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic", 0);
  for (int i = 0; i < 4; ++i) r.u8("magic");

  const std::uint32_t dim = r.u32("dimension");
  if (dim < 2 || dim > kMaxDim) throw FormatError("invalid dimension " + std::to_string(dim), 4);
  const std::uint32_t num_layers = r.u32("layer count");
  if (num_layers == 0 || num_layers > kMaxLayers)
    throw FormatError("invalid layer count " + std::to_string(num_layers), 8);

  const std::size_t st_at = r.offset();
  Standardizer st;
  st.shift.resize(dim);
  st.scale.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) st.shift(i) = r.f64("standardizer shift");
  for (std::uint32_t i = 0; i < dim; ++i) st.scale(i) = r.f64("standardizer scale");
  for (std::uint32_t i = 0; i < dim; ++i) {
    if (!std::isfinite(st.shift(i))) throw FormatError("non-finite standardizer shift", st_at + 8 * i);
    if (!std::isfinite(st.scale(i)) || !(st.scale(i) > 0.0))
      throw FormatError("standardizer scale must be positive and finite", st_at + 8 * (dim + i));
  }

  std::vector<CouplingLayer> layers;
  for (std::uint32_t l = 0; l < num_layers; ++l) {
    const std::size_t layer_at = r.offset();
    const std::uint32_t n_id = r.u32("identity set size");
    if (n_id == 0 || n_id >= dim) throw FormatError("identity set must be a proper subset", layer_at);
    std::vector<int> identity;
    for (std::uint32_t i = 0; i < n_id; ++i) {
      const std::size_t at = r.offset();
      const std::uint32_t idx = r.u32("identity index");
      if (idx >= dim) throw FormatError("identity index out of range", at);
      identity.push_back(static_cast<int>(idx));
    }
    Mlp scale = read_mlp(r);
    Mlp translate = read_mlp(r);
    try {
      layers.emplace_back(dim, std::move(identity), std::move(scale), std::move(translate));
    } catch (const ShapeError& e) {
      throw FormatError(std::string("inconsistent coupling layer: ") + e.what(), layer_at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes", r.offset());
  return FlowModel(dim, std::move(layers), std::move(st));
}

std::size_t serialized_size(std::size_t dim, const FlowArch& arch) {
  std::size_t n = 4 + 4 + 4 + 16 * dim;
  for (std::size_t l = 0; l < arch.layers; ++l) {
    const std::size_t id = coupling_mask(dim, l).size();
    n += 4 + 4 * id;
    std::vector<std::size_t> dims{id};
    dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
    dims.push_back(dim - id);
    std::size_t net = 4;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k)
      net += 8 + 8 * (dims[k] * dims[k + 1] + dims[k + 1]) + 1;
    n += 2 * net;
  }
  return n;
}

}  // namespace nap
