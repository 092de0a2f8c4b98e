#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mkv {

//! Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//! Output is a pure function of (key, counter), so every particle owns an
//! independent stream addressed by its id without carrying state.
class Philox4x32
{
public:
  using Block = std::array<std::uint32_t, 4>;

  explicit Philox4x32(std::uint64_t seed)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}
  {}

  Block operator()(Block ctr) const
  {
    auto key = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

private:
  std::array<std::uint32_t, 2> key_;
};

//! Gaussian and uniform variates addressed by (stream, step, slot).
//! One Philox call yields four normals; `slot` picks the block of four.
class NormalStream
{
public:
  NormalStream(std::uint64_t seed, std::uint64_t stream)
    : gen_(seed)
    , stream_(stream)
  {}

  //! Four independent uniforms in the open interval (0, 1).
  std::array<double, 4> uniforms(std::uint64_t step, std::uint32_t slot = 0) const
  {
    const auto out = gen_({static_cast<std::uint32_t>(step),
                           static_cast<std::uint32_t>(step >> 32) ^ (slot << 16),
                           static_cast<std::uint32_t>(stream_),
                           static_cast<std::uint32_t>(stream_ >> 32)});
    std::array<double, 4> u{};
    for (int i = 0; i < 4; ++i)
      u[i] = (static_cast<double>(out[i]) + 0.5) * 0x1.0p-32;
    return u;
  }

  std::array<double, 4> normals(std::uint64_t step, std::uint32_t slot = 0) const
  {
    const auto u = uniforms(step, slot);
    const double r0 = std::sqrt(-2.0 * std::log(u[0]));
    const double r1 = std::sqrt(-2.0 * std::log(u[2]));
    const double a0 = 2.0 * std::numbers::pi * u[1];
    const double a1 = 2.0 * std::numbers::pi * u[3];
    return {r0 * std::cos(a0), r0 * std::sin(a0), r1 * std::cos(a1), r1 * std::sin(a1)};
  }

  //! Fills `out` with normals for one step, drawing as many blocks as needed.
  template<class Span>
  void fill_normals(std::uint64_t step, Span&& out) const
  {
    std::size_t k = 0;
    for (std::uint32_t slot = 0; k < out.size(); ++slot) {
      const auto z = normals(step, slot);
      for (int i = 0; i < 4 && k < out.size(); ++i)
        out[k++] = z[i];
    }
  }

private:
  Philox4x32 gen_;
  std::uint64_t stream_;
};

} // namespace mkv
