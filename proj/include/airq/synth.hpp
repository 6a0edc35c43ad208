#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "airq/geo.hpp"
#include "airq/parties.hpp"
#include "airq/random.hpp"
#include "airq/types.hpp"

namespace airq::synth {

/// Truncated normal TN(upper, lower, mean, sigma).
struct TruncatedNormal {
  double upper = 1.5;
  double lower = 0.5;
  double mean = 1.0;
  double sigma = 0.5;
};

/// Shape of the synthetic truth field: a regional AR(1) level shared by all grids,
/// a daily cycle, and a local AR(1) per grid whose innovations are correlated
/// through a Gaussian kernel of the given length, plus an independent per-grid
/// AR(1) term (nugget) with the same persistence.
struct TruthModel {
  double base_mean = 55.0;
  double base_sd = 8.0;
  double length_km = 10.0;
  double regional_sd = 12.0;
  double regional_phi = 0.995;
  double local_sd = 4.0;
  double local_phi = 0.97;
  double nugget_sd = 4.0;
  double diurnal_amplitude = 8.0;
};

struct WorldParams {
  std::size_t sources = 500;
  std::size_t grids = 34;
  Cycle cycles = 7 * 96;
  double zipf_exponent = 1.0;
  /// Expected pass-bys per cycle over all grids; <= 0 means 10 * grids.
  double total_passbys = 0.0;
  TruncatedNormal good{};
  TruncatedNormal bad{2.5, 1.5, 2.0, 0.5};
  double bad_fraction = 0.0;
  double noise_variance = 0.2;
  /// Synthetic grid placement: square region (km side) around a center point.
  double center_lat = 39.92;
  double center_lon = 116.40;
  double region_km = 30.0;
  TruthModel truth{};

  double passbys() const { return total_passbys > 0.0 ? total_passbys : 10.0 * static_cast<double>(grids); }
};

void validate(const WorldParams& p);

/// Real truths, one row per grid, one column per cycle.
using TruthTable = Eigen::MatrixXd;

struct Dataset {
  std::vector<geo::Grid> grids;
  TruthTable truths;
  std::size_t hourly_records = 0;  // distinct hourly timestamps
  std::size_t filled_gaps = 0;
};

/// Long-form CSV (station_id, lat, lon, timestamp, aqi) with a header row.
/// Hourly values are interpolated to four cycles per hour. Missing or NaN AQI is
/// filled linearly for gaps up to 4 hours; longer gaps are an error.
Dataset parse_aqi_dataset(std::istream& is);
Dataset load_aqi_dataset(const std::filesystem::path& path);

/// Inserts a + (b - a) k / 4, k = 1..3, between consecutive hourly values.
std::vector<double> interpolate_quarter_hours(std::span<const double> hourly);

/// Uniformly placed grids in the configured region.
std::vector<geo::Grid> synth_grids(const WorldParams& p, std::uint64_t seed);

/// Mean-reverting, spatially correlated AQI walk clipped to [20, 100].
TruthTable synth_truth_series(std::span<const geo::Grid> grids, Cycle cycles, std::uint64_t seed,
                              const TruthModel& model = {});

/// Rank r (1-based, grid index r-1) gets total * r^-a / sum_r' r'^-a.
Eigen::VectorXd zipf_expected_counts(std::size_t m, double exponent, double total);

/// Per grid: Poisson(expected) distinct sources sampled without replacement (capped at n).
std::vector<std::vector<SourceId>> draw_passersby(const Eigen::VectorXd& expected, std::size_t sources,
                                                  Cycle cycle, std::uint64_t seed);

double sample_truncated_normal(const TruncatedNormal& tn, KeyedStream& rng);

/// kappa per source; round(bad_fraction * n) randomly chosen sources draw from the bad law.
std::vector<parties::SourceProfile> draw_reliability(const WorldParams& p, std::uint64_t seed);

/// Normal draw with mean kappa * truth and the given variance.
double gen_observation(double truth, double kappa, double variance, KeyedStream& rng);

struct World {
  WorldParams params;
  std::uint64_t seed = 0;
  std::vector<geo::Grid> grids;
  TruthTable truths;
  std::vector<parties::SourceProfile> sources;
  Eigen::VectorXd expected;  // per grid pass-bys per cycle
};

/// Builds a world from the synthetic generator, or from a dataset when given
/// (the dataset fixes grids and truths; cycles are truncated to params.cycles).
World make_world(const WorldParams& p, std::uint64_t seed, const Dataset* dataset = nullptr);

/// All observations of one cycle, ordered by (source, grid).
std::vector<Observation> build_cycle(const World& world, Cycle cycle);

/// JSON-lines world dump: grid, source, truth and observation records.
void write_world_jsonl(std::ostream& os, const World& world);

}  // namespace airq::synth
