#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace airq::metrics {

inline constexpr std::size_t kCyclesPerDay = 96;

struct Rmse {
  double value = 0.0;     // NaN when nothing was evaluated
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // grids without an estimate
};

/// sqrt(mean (est - truth)^2) over grids where est is not NaN.
Rmse rmse(const Eigen::VectorXd& est, const Eigen::VectorXd& truth);

struct DailyValue {
  std::size_t day = 0;
  double value = 0.0;
  std::size_t cycles = 0;  // cycles with a finite RMSE
  bool partial = false;    // trailing day shorter than kCyclesPerDay
};

/// Mean of the per-cycle RMSEs in each 96-cycle window. NaN cycles are skipped.
std::vector<DailyValue> daily_rmse(std::span<const double> per_cycle, std::size_t cycles_per_day = kCyclesPerDay);

/// Per grid (row), cycles with |est - truth| / truth < threshold.
Eigen::VectorXi valid_estimations(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth, double threshold);

/// base - other per day; positive when `other` beats the base.
std::vector<double> rmse_difference(std::span<const double> base, std::span<const double> other);

/// Estimates of every algorithm, grids x cycles, next to the real truths.
struct TruthDump {
  std::vector<std::string> algos;
  std::vector<Eigen::MatrixXd> estimates;
  Eigen::MatrixXd real;
};

struct DailyRow {
  std::string algo;
  std::size_t day = 0;
  double rmse = 0.0;
  std::size_t cycles = 0;
  double coverage = 0.0;  // mean fraction of grids estimated
  bool partial = false;
};
struct ValidRow {
  std::string algo;
  std::size_t grid = 0;
  double threshold = 0.0;
  int count = 0;
};
struct DiffRow {
  std::size_t day = 0;
  std::string pair;  // "<base>-<other>"
  double value = 0.0;
};

struct MetricsTable {
  std::vector<DailyRow> daily;
  std::vector<ValidRow> valid;
  std::vector<DiffRow> diff;
  /// per algorithm, per cycle
  std::vector<std::vector<double>> cycle_rmse;

  std::vector<double> daily_values(const std::string& algo) const;
  int valid_count(const std::string& algo, std::size_t grid, double threshold) const;
};

inline constexpr double kDefaultThresholds[] = {0.15, 0.20, 0.25};

/// Daily RMSE, valid estimations at each threshold, and differences
/// `base - other` for every other algorithm when `base` is present.
MetricsTable compute(const TruthDump& dump, std::span<const double> thresholds = kDefaultThresholds,
                     const std::string& base = "AirQ");

/// Shortest round-trip text for a double; empty for NaN.
std::string format_double(double v);

void write_truths_csv(std::ostream& os, const TruthDump& dump);
TruthDump read_truths_csv(std::istream& is);

void write_daily_csv(std::ostream& os, const MetricsTable& t);
void write_valid_csv(std::ostream& os, const MetricsTable& t);
void write_diff_csv(std::ostream& os, const MetricsTable& t);

/// rmse_daily.csv, valid.csv, diff.csv (and truths.csv) into `dir`.
void write_tables(const std::filesystem::path& dir, const MetricsTable& t);
void write_all(const std::filesystem::path& dir, const TruthDump& dump, const MetricsTable& t);

}  // namespace airq::metrics
