#pragma once

#include <cstdint>

namespace airq {

/// Fixed-point value in the 64-bit modular ring, 10^6 raw units per unit.
/// Addition and subtraction wrap, so additive masks cancel exactly.
struct FixedPoint {
  static constexpr std::int64_t kScale = 1'000'000;
  /// Largest raw magnitude accepted by encode(): 2^40.
  static constexpr std::uint64_t kMaxRaw = std::uint64_t{1} << 40;

  std::uint64_t raw = 0;

  /// round(v * 10^6) as a ring element. Throws EncodingError outside |v| <= 2^40 / 10^6.
  static FixedPoint encode(double v);
  /// Signed interpretation of the raw value, divided by the scale.
  double decode() const noexcept;

  friend constexpr FixedPoint operator+(FixedPoint a, FixedPoint b) noexcept { return {a.raw + b.raw}; }
  friend constexpr FixedPoint operator-(FixedPoint a, FixedPoint b) noexcept { return {a.raw - b.raw}; }
  constexpr FixedPoint& operator+=(FixedPoint o) noexcept {
    raw += o.raw;
    return *this;
  }
  constexpr FixedPoint& operator-=(FixedPoint o) noexcept {
    raw -= o.raw;
    return *this;
  }
  friend constexpr bool operator==(FixedPoint, FixedPoint) noexcept = default;
};

inline double fx_decode(FixedPoint f) noexcept { return f.decode(); }
inline FixedPoint fx_encode(double v) { return FixedPoint::encode(v); }

}  // namespace airq
