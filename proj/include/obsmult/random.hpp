#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (master seed, domain, stream, index), so results never depend on the
// order of evaluation or on how work is split across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace obsmult {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3").
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      ctr = single_round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& ctr, const Key& key) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
};

/// Separates independent uses of the same master seed.
enum class RngDomain : std::uint16_t {
  LabelDraw = 1,
  BootstrapRows = 2,
  Permutation = 3,
  Features = 4,
  Acquisition = 5,
  SeedDerivation = 6,
};

/// The key of one Bernoulli label stream: `stream_index` is the resample
/// index k (0 for the initial draw).
struct LabelDrawSeed {
  std::uint64_t master_seed = 0;
  std::uint32_t stream_index = 0;
};

/// Random values addressed by (domain, stream, index, lane) under one seed.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t master_seed)
      : key_{static_cast<std::uint32_t>(master_seed),
             static_cast<std::uint32_t>(master_seed >> 32)} {}

  constexpr Philox4x32::Counter block(RngDomain domain, std::uint32_t stream,
                                      std::uint64_t index, std::uint16_t lane = 0) const {
    const Philox4x32::Counter ctr{
        static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream,
        (std::uint32_t{static_cast<std::uint16_t>(domain)} << 16) | lane};
    return Philox4x32::generate(ctr, key_);
  }

  /// An independent 64-bit seed for sub-task (tag, index).
  std::uint64_t derive(std::uint32_t tag, std::uint64_t index) const {
    const auto words = block(RngDomain::SeedDerivation, tag, index);
    return (std::uint64_t{words[0]} << 32) | words[1];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform(RngDomain domain, std::uint32_t stream, std::uint64_t index,
                 std::uint16_t lane = 0) const {
    return to_unit(block(domain, stream, index, lane), 0);
  }

  /// Uniform integer in [0, bound), bound >= 1. Bias is below 2^-53 * bound.
  std::uint64_t below(std::uint64_t bound, RngDomain domain, std::uint32_t stream,
                      std::uint64_t index) const {
    const auto r = static_cast<std::uint64_t>(uniform(domain, stream, index) *
                                              static_cast<double>(bound));
    return r < bound ? r : bound - 1;
  }

  /// Standard normal via Box-Muller on the two halves of one block.
  double normal(RngDomain domain, std::uint32_t stream, std::uint64_t index,
                std::uint16_t lane = 0) const {
    const auto words = block(domain, stream, index, lane);
    const double u1 = 1.0 - to_unit(words, 0);  // (0, 1]
    const double u2 = to_unit(words, 2);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static double to_unit(const Philox4x32::Counter& words, int first) {
    const std::uint64_t a = words[first] >> 5;
    const std::uint64_t b = words[first + 1] >> 6;
    return static_cast<double>((a << 26) | b) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
};

}  // namespace obsmult
