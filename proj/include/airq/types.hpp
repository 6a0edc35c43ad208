#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace airq {

/// Dense index of a sensing grid within one world.
enum class GridId : std::uint32_t {};
/// Dense index of a source (vehicle, or pseudo-id slot on the server side).
enum class SourceId : std::uint32_t {};

/// Sensing-cycle index, 0-based. Day d covers cycles [96d, 96d + 95].
using Cycle = std::int64_t;

constexpr std::size_t index(GridId g) noexcept { return static_cast<std::size_t>(g); }
constexpr std::size_t index(SourceId s) noexcept { return static_cast<std::size_t>(s); }
constexpr GridId grid_id(std::size_t i) noexcept { return static_cast<GridId>(i); }
constexpr SourceId source_id(std::size_t i) noexcept { return static_cast<SourceId>(i); }

/// One sensory reading v_{s,j} for grid g^{s,j}.
struct Observation {
  SourceId source{};
  GridId grid{};
  double value = 0.0;
  Cycle cycle = 0;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EncodingError : public std::range_error {
 public:
  using std::range_error::range_error;
};

}  // namespace airq
