#include "airq/fixed_point.hpp"

#include <cmath>
#include <string>

#include "airq/types.hpp"

namespace airq {

FixedPoint FixedPoint::encode(double v) {
  const double scaled = std::round(v * static_cast<double>(kScale));
  if (!std::isfinite(scaled) || std::abs(scaled) > static_cast<double>(kMaxRaw))
    throw EncodingError("fixed-point encode: value " + std::to_string(v) + " out of range");
  return {static_cast<std::uint64_t>(static_cast<std::int64_t>(scaled))};
}

double FixedPoint::decode() const noexcept {
  return static_cast<double>(static_cast<std::int64_t>(raw)) / static_cast<double>(kScale);
}

}  // namespace airq
