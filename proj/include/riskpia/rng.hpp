#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace riskpia {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Output is a
/// pure function of (key, counter), so every path owns an independent
/// substream regardless of which thread runs it.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block apply(Block ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

/// Standard normals for one (seed, stream, path) triple: counter words are
/// (block lo, block hi, path, stream); each block gives four normals by two
/// Box-Muller transforms.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint32_t stream, std::uint32_t path)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream),
        path_(path) {}

  double next() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  static double uniform(std::uint32_t u) { return (static_cast<double>(u) + 0.5) * 0x1p-32; }

 private:
  void refill() {
    const Philox4x32::Block r = Philox4x32::apply(
        {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32), path_, stream_}, key_);
    ++block_;
    for (int k = 0; k < 2; ++k) {
      const double rad = std::sqrt(-2.0 * std::log(uniform(r[2 * k])));
      const double ang = 2.0 * std::numbers::pi * uniform(r[2 * k + 1]);
      buf_[2 * k] = rad * std::cos(ang);
      buf_[2 * k + 1] = rad * std::sin(ang);
    }
    pos_ = 0;
  }

  Philox4x32::Key key_;
  std::uint32_t stream_;
  std::uint32_t path_;
  std::uint64_t block_ = 0;
  std::array<double, 4> buf_{};
  int pos_ = 4;
};

}  // namespace riskpia
