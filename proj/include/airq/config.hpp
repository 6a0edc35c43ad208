#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "airq/geo.hpp"
#include "airq/parties.hpp"
#include "airq/privacy.hpp"
#include "airq/synth.hpp"
#include "airq/temporal.hpp"
#include "airq/truthdisc.hpp"

namespace airq {

enum class Algorithm : std::uint8_t { td, st_plain, airq, sst_plain, eairq };

inline constexpr Algorithm kAllAlgorithms[] = {Algorithm::td, Algorithm::st_plain, Algorithm::airq,
                                               Algorithm::sst_plain, Algorithm::eairq};

/// "TD", "ST-plain", "AirQ", "SST-plain", "EAirQ".
std::string_view name(Algorithm a) noexcept;
Algorithm algorithm_from_name(std::string_view s);

struct ExperimentConfig {
  synth::WorldParams world{};
  geo::SpatialParams spatial{};
  temporal::TemporalParams temporal{};
  td::SolverParams solver{};
  privacy::PerturbationParams perturbation{};
  parties::HandlingParams handling{};
  /// Kept in canonical order, no duplicates.
  std::vector<Algorithm> algorithms{Algorithm::td, Algorithm::airq, Algorithm::eairq};
  std::uint64_t seed = 1;
  /// Long-form AQI CSV; synthetic truths when absent.
  std::optional<std::filesystem::path> dataset;
  std::filesystem::path output_dir = "out";

  bool runs(Algorithm a) const;
};

/// Throws ConfigError on any violated invariant.
void validate(const ExperimentConfig& c);

/// Nested JSON; every key is optional and unknown keys are rejected.
/// Relative dataset paths resolve against `base_dir`.
ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical form: all keys, sorted, defaults filled in.
std::string config_to_json(const ExperimentConfig& c, int indent = 2);
/// 16 hex digits of FNV-1a over the compact canonical form, output dir excluded.
std::string config_hash(const ExperimentConfig& c);

}  // namespace airq
