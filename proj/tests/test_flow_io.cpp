#include <cstring>
#include <random>

#include "doctest.h"
#include "nap/flow.hpp"
#include "support.hpp"

using namespace nap;
using nap::testing::random_matrix;

namespace {

FlowModel make_flow(std::size_t dim, const FlowArch& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Standardizer st;
  st.shift = nap::testing::random_vector(static_cast<Eigen::Index>(dim), rng);
  st.scale = Vector::Constant(static_cast<Eigen::Index>(dim), 1.5);
  return FlowModel::random(dim, arch, st, rng, 1.0);
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
         std::uint32_t(b[at + 3]) << 24;
}

std::size_t format_error_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

}  // namespace

TEST_SUITE("flow_io") {

TEST_CASE("header layout") {
  const FlowModel f = make_flow(3, FlowArch{2, {5}}, 1);
  const auto b = serialize(f);
  CHECK(std::memcmp(b.data(), "NVP1", 4) == 0);
  CHECK(read_u32(b, 4) == 3);
  CHECK(read_u32(b, 8) == 2);
  double shift0;
  std::memcpy(&shift0, b.data() + 12, 8);
  CHECK(shift0 == f.standardizer().shift(0));
  const std::size_t layer0 = 12 + 16 * 3;
  CHECK(read_u32(b, layer0) == 2);  // |I_0| = {0, 2}
  CHECK(read_u32(b, layer0 + 4) == 0);
  CHECK(read_u32(b, layer0 + 8) == 2);
  CHECK(read_u32(b, layer0 + 12) == 2);  // scale net: two dense layers
  CHECK(read_u32(b, layer0 + 16) == 5);  // rows = out
  CHECK(read_u32(b, layer0 + 20) == 2);  // cols = in
}

TEST_CASE("round trip is bit exact") {
  const FlowModel f = make_flow(4, FlowArch{3, {16, 16}}, 2);
  const auto bytes = serialize(f);
  const FlowModel g = deserialize(bytes);
  CHECK(serialize(g) == bytes);
  std::mt19937_64 rng(3);
  const Matrix x = random_matrix(1000, 4, rng, 2.0);
  const Vector a = f.log_prob(x), b = g.log_prob(x);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 1000) == 0);
  CHECK(g.log_prob_upper_bound() == f.log_prob_upper_bound());
}

TEST_CASE("length depends on architecture only") {
  for (std::size_t d : {2u, 3u, 7u}) {
    const FlowArch arch{3, {8, 6}};
    CHECK(serialize(make_flow(d, arch, d)).size() == serialized_size(d, arch));
  }
  std::mt19937_64 rng(4);
  TrainConfig cfg;
  cfg.iterations = 3;
  const FlowArch arch{3, {8, 8}};
  const auto small = serialize(fit_flow(random_matrix(50, 2, rng), arch, cfg).model);
  const auto large = serialize(fit_flow(random_matrix(5000, 2, rng), arch, cfg).model);
  CHECK(small.size() == large.size());
}

TEST_CASE("D = 2 vs D = 4 differ only through input/output layers and the header") {
  const FlowArch arch{3, {10, 10}};
  const auto n2 = static_cast<long>(serialized_size(2, arch));
  const auto n4 = static_cast<long>(serialized_size(4, arch));
  // header: +2 dims * 16 bytes; per layer: +1 index (4 bytes); per net: first layer gains
  // one input column (10 weights) and last layer one output row (10 weights + 1 bias)
  const long per_net = 8 * (10 + 10 + 1);
  CHECK(n4 - n2 == 2 * 16 + 3 * (4 + 2 * per_net));
}

TEST_CASE("malformed input names the offset") {
  const auto good = serialize(make_flow(2, FlowArch{2, {4}}, 5));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(format_error_offset(bad_magic) == 0);

  auto bad_dim = good;
  bad_dim[4] = 1;
  CHECK(format_error_offset(bad_dim) == 4);

  auto bad_layers = good;
  bad_layers[8] = 0;
  CHECK(format_error_offset(bad_layers) == 8);

  auto bad_scale = good;
  const double neg = -1.0;
  std::memcpy(bad_scale.data() + 12 + 16, &neg, 8);
  CHECK(format_error_offset(bad_scale) == 12 + 16);

  auto bad_subset = good;
  bad_subset[12 + 32] = 2;  // |I_0| = D is not a proper subset
  CHECK(format_error_offset(bad_subset) == 12 + 32);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  CHECK(format_error_offset(truncated) > 12);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(format_error_offset(trailing) == good.size());

  CHECK(format_error_offset({}) == 0);

  // activation byte of the scale net's last dense layer
  const std::size_t net_start = 12 + 32 + 8;
  const std::size_t first = net_start + 4 + 8 + 8 * (4 * 1 + 4) + 1;
  const std::size_t act_at = first + 8 + 8 * (1 * 4 + 1);
  REQUIRE(good[act_at] == static_cast<std::uint8_t>(Activation::tanh));
  auto bad_act = good;
  bad_act[act_at] = 9;
  CHECK(format_error_offset(bad_act) == act_at);
  auto not_tanh = good;
  not_tanh[act_at] = static_cast<std::uint8_t>(Activation::identity);
  CHECK_THROWS_AS(deserialize(not_tanh), FormatError);
}

}  // TEST_SUITE
