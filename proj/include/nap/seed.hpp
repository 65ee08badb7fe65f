#pragma once

#include <cstdint>
#include <initializer_list>

namespace nap {

/// Hierarchical seed derivation: mixes a parent seed with a path of stream tags
/// (e.g. {stage, shard, chain}) through SplitMix64. Distinct paths give independent
/// streams; the tag count is part of the hash, so {1} and {1, 0} differ.
std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path);

/// Stage tags used by the experiment driver.
namespace stream {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t subposterior_mcmc = 3;
inline constexpr std::uint64_t flow_fit = 4;
inline constexpr std::uint64_t aggregation = 5;
inline constexpr std::uint64_t ground_truth = 6;
inline constexpr std::uint64_t baseline = 7;
inline constexpr std::uint64_t chain = 8;
inline constexpr std::uint64_t repeat = 9;
}  // namespace stream

}  // namespace nap
