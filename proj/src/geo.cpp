#include "airq/geo.hpp"

#include <ostream>
#include <vector>

namespace airq::geo {

void validate(const Grid& g) {
  if (!(g.latitude >= -90.0 && g.latitude <= 90.0))
    throw ConfigError("grid " + std::to_string(index(g.id)) + ": latitude out of [-90, 90]");
  if (!(g.longitude >= -180.0 && g.longitude <= 180.0))
    throw ConfigError("grid " + std::to_string(index(g.id)) + ": longitude out of [-180, 180]");
}

void validate(const SpatialParams& p) {
  if (!(p.omega > 0.0)) throw ConfigError("spatial.omega must be > 0");
  if (!(p.u > 0.0)) throw ConfigError("spatial.u must be > 0");
}

void ThetaTable::write_csv(std::ostream& os) const {
  os << "origin_id,target_id,theta\n";
  const auto old = os.precision(17);
  for (Eigen::Index r = 0; r < m_.outerSize(); ++r)
    for (Matrix::InnerIterator it(m_, r); it; ++it)
      os << r << ',' << it.col() << ',' << it.value() << '\n';
  os.precision(old);
}

ThetaTable build_theta_table(std::span<const Grid> grids, const SpatialParams& p) {
  validate(p);
  if (grids.empty()) throw ConfigError("theta table needs at least one grid");
  const std::size_t m = grids.size();
  std::vector<const Grid*> by_id(m, nullptr);
  for (const auto& g : grids) {
    validate(g);
    const auto i = index(g.id);
    if (i >= m) throw ConfigError("grid id " + std::to_string(i) + " is not a dense index");
    if (by_id[i]) throw ConfigError("duplicate grid id " + std::to_string(i));
    by_id[i] = &g;
  }

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(m * 4);
  for (std::size_t a = 0; a < m; ++a) {
    entries.emplace_back(a, a, 1.0);
    for (std::size_t b = a + 1; b < m; ++b) {
      const double theta = logical_distance(geographical_distance(*by_id[a], *by_id[b]), p);
      if (theta > 0.0) {
        entries.emplace_back(a, b, theta);
        entries.emplace_back(b, a, theta);
      }
    }
  }
  ThetaTable::Matrix mat(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  mat.setFromTriplets(entries.begin(), entries.end());
  return ThetaTable(std::move(mat));
}

}  // namespace airq::geo
