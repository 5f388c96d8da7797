#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace cbo::rng {

using Block = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
inline Block philox4x32(Block ctr, Key key) noexcept {
  constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
  constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += w0;
      key[1] += w1;
    }
    const std::uint64_t p0 = std::uint64_t{m0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{m1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent key families, so initial positions, Brownian increments and
// auxiliary draws never share counters.
enum class Domain : std::uint32_t {
  init = 0x494e4954u,
  step = 0x53544550u,
  tangent = 0x54414e47u,
  dictionary = 0x44494354u,
  synthetic = 0x53594e54u,
};

// Maps 64 random bits to a double in the open interval (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = (std::uint64_t{hi} << 32 | lo) >> 12;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

// Stateless counter-based source. A draw is addressed by
// (replica, stream pair, step); each address yields two normals, so stream
// 2k and 2k+1 of the same step share one Philox block.
class CounterRng {
 public:
  CounterRng() = default;
  CounterRng(std::uint64_t master_seed, Domain domain) noexcept
      : seed_(master_seed), domain_(domain) {
    const std::uint64_t k =
        splitmix64(master_seed ^ (std::uint64_t{static_cast<std::uint32_t>(domain)} << 17));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  std::uint64_t seed() const noexcept { return seed_; }
  Domain domain() const noexcept { return domain_; }

  Block block(std::uint32_t step, std::uint32_t replica, std::uint64_t pair) const noexcept {
    return philox4x32({step, replica, static_cast<std::uint32_t>(pair),
                       static_cast<std::uint32_t>(pair >> 32)},
                      key_);
  }

  std::array<double, 2> uniform_pair(std::uint32_t step, std::uint32_t replica,
                                     std::uint64_t pair) const noexcept {
    const Block b = block(step, replica, pair);
    return {to_open_unit(b[0], b[1]), to_open_unit(b[2], b[3])};
  }

  // Box-Muller on one block.
  std::array<double, 2> normal_pair(std::uint32_t step, std::uint32_t replica,
                                    std::uint64_t pair) const noexcept {
    const auto [u1, u2] = uniform_pair(step, replica, pair);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(theta), r * std::sin(theta)};
  }

  double normal(std::uint32_t step, std::uint32_t replica, std::uint64_t stream) const noexcept {
    return normal_pair(step, replica, stream >> 1)[stream & 1u];
  }

  double uniform(std::uint32_t step, std::uint32_t replica, std::uint64_t stream) const noexcept {
    return uniform_pair(step, replica, stream >> 1)[stream & 1u];
  }

 private:
  std::uint64_t seed_ = 0;
  Domain domain_ = Domain::step;
  Key key_{};
};

// Sequential reader over consecutive normal streams of one (step, replica),
// reusing the second half of each Box-Muller pair.
class NormalCursor {
 public:
  NormalCursor(const CounterRng& rng, std::uint32_t step, std::uint32_t replica) noexcept
      : rng_(&rng), step_(step), replica_(replica) {}

  double at(std::uint64_t stream) noexcept {
    const std::uint64_t pair = stream >> 1;
    if (pair != cached_pair_) {
      cache_ = rng_->normal_pair(step_, replica_, pair);
      cached_pair_ = pair;
    }
    return cache_[stream & 1u];
  }

 private:
  const CounterRng* rng_;
  std::uint32_t step_, replica_;
  std::uint64_t cached_pair_ = ~std::uint64_t{0};
  std::array<double, 2> cache_{};
};

}  // namespace cbo::rng
