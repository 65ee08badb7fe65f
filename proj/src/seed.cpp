#include "nap/seed.hpp"

namespace nap {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(parent ^ (0xa0761d6478bd642fULL * (path.size() + 1)));
  for (auto tag : path) h = splitmix64(h ^ splitmix64(tag + 0x2545f4914f6cdd1dULL));
  return h;
}

}  // namespace nap
