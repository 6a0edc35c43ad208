#pragma once

#include <cmath>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "airq/types.hpp"

namespace airq::geo {

inline constexpr double kEarthRadiusKm = 6371.0;

struct Grid {
  GridId id{};
  double latitude = 0.0;   // degrees
  double longitude = 0.0;  // degrees
  std::string label;
};

/// Gaussian-kernel parameters, both in kilometers.
struct SpatialParams {
  double omega = 3.0;
  double u = 8.0;
};

void validate(const Grid& g);
void validate(const SpatialParams& p);

/// Great-circle distance in kilometers (haversine).
template <typename Scalar>
Scalar haversine_km(Scalar lat_a, Scalar lon_a, Scalar lat_b, Scalar lon_b) {
  using std::asin;
  using std::cos;
  using std::min;
  using std::sin;
  using std::sqrt;
  const Scalar to_rad = Scalar(std::numbers::pi) / Scalar(180);
  const Scalar dlat = (lat_b - lat_a) * to_rad;
  const Scalar dlon = (lon_b - lon_a) * to_rad;
  const Scalar s1 = sin(dlat / Scalar(2));
  const Scalar s2 = sin(dlon / Scalar(2));
  const Scalar h = s1 * s1 + cos(lat_a * to_rad) * cos(lat_b * to_rad) * s2 * s2;
  return Scalar(2 * kEarthRadiusKm) * asin(min(Scalar(1), sqrt(h)));
}

inline double geographical_distance(const Grid& a, const Grid& b) {
  return haversine_km(a.latitude, a.longitude, b.latitude, b.longitude);
}

/// exp(-d^2 / (2 omega^2)) for d < u, else 0.
template <typename Scalar>
Scalar logical_distance(Scalar d, const SpatialParams& p) {
  using std::exp;
  if (!(d < Scalar(p.u))) return Scalar(0);
  const Scalar w = Scalar(p.omega);
  return exp(-(d * d) / (Scalar(2) * w * w));
}

/// Immutable sparse table of spatial correlations theta(origin, target).
/// Only nonzero entries are stored; theta(g, g) = 1.
class ThetaTable {
 public:
  using Matrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  ThetaTable() = default;
  explicit ThetaTable(Matrix m) : m_(std::move(m)) { m_.makeCompressed(); }

  std::size_t grid_count() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  std::size_t nonzeros() const noexcept { return static_cast<std::size_t>(m_.nonZeros()); }

  double operator()(GridId origin, GridId target) const {
    return m_.coeff(static_cast<Eigen::Index>(index(origin)), static_cast<Eigen::Index>(index(target)));
  }

  /// Calls f(target, theta) for every nonzero entry of the origin's row.
  template <typename F>
  void for_each_target(GridId origin, F&& f) const {
    for (Matrix::InnerIterator it(m_, static_cast<Eigen::Index>(index(origin))); it; ++it)
      f(grid_id(static_cast<std::size_t>(it.col())), it.value());
  }

  const Matrix& matrix() const noexcept { return m_; }

  /// CSV dump: origin_id,target_id,theta
  void write_csv(std::ostream& os) const;

 private:
  Matrix m_;
};

/// Throws ConfigError on duplicate grid ids or an empty grid set.
/// Grid ids must be the dense indices 0..m-1 (in any order).
ThetaTable build_theta_table(std::span<const Grid> grids, const SpatialParams& p);

}  // namespace airq::geo
