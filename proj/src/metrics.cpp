#include "airq/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "airq/types.hpp"

namespace airq::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

}  // namespace

Rmse rmse(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
  if (est.size() != truth.size()) throw std::invalid_argument("rmse: size mismatch");
  Rmse r;
  double acc = 0.0;
  for (Eigen::Index g = 0; g < est.size(); ++g) {
    if (std::isnan(est[g])) {
      ++r.excluded;
      continue;
    }
    const double e = est[g] - truth[g];
    acc += e * e;
    ++r.evaluated;
  }
  r.value = r.evaluated ? std::sqrt(acc / static_cast<double>(r.evaluated)) : kNaN;
  return r;
}

std::vector<DailyValue> daily_rmse(std::span<const double> per_cycle, std::size_t cycles_per_day) {
  std::vector<DailyValue> out;
  for (std::size_t start = 0; start < per_cycle.size(); start += cycles_per_day) {
    const std::size_t end = std::min(per_cycle.size(), start + cycles_per_day);
    DailyValue d;
    d.day = start / cycles_per_day;
    d.partial = end - start < cycles_per_day;
    double acc = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      if (std::isnan(per_cycle[i])) continue;
      acc += per_cycle[i];
      ++d.cycles;
    }
    d.value = d.cycles ? acc / static_cast<double>(d.cycles) : kNaN;
    out.push_back(d);
  }
  return out;
}

Eigen::VectorXi valid_estimations(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth, double threshold) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols())
    throw std::invalid_argument("valid_estimations: shape mismatch");
  Eigen::VectorXi out = Eigen::VectorXi::Zero(est.rows());
  for (Eigen::Index g = 0; g < est.rows(); ++g)
    for (Eigen::Index t = 0; t < est.cols(); ++t) {
      const double e = est(g, t);
      if (!std::isnan(e) && std::abs(e - truth(g, t)) / truth(g, t) < threshold) ++out[g];
    }
  return out;
}

std::vector<double> rmse_difference(std::span<const double> base, std::span<const double> other) {
  if (base.size() != other.size()) throw std::invalid_argument("rmse_difference: length mismatch");
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = base[i] - other[i];
  return out;
}

std::vector<double> MetricsTable::daily_values(const std::string& algo) const {
  std::vector<double> out;
  for (const auto& r : daily)
    if (r.algo == algo) out.push_back(r.rmse);
  return out;
}

int MetricsTable::valid_count(const std::string& algo, std::size_t grid, double threshold) const {
  for (const auto& r : valid)
    if (r.algo == algo && r.grid == grid && r.threshold == threshold) return r.count;
  throw std::out_of_range("no valid-estimation row for " + algo);
}

MetricsTable compute(const TruthDump& dump, std::span<const double> thresholds, const std::string& base) {
  MetricsTable t;
  const auto cycles = static_cast<std::size_t>(dump.real.cols());
  const auto grids = static_cast<double>(dump.real.rows());
  std::map<std::string, std::vector<double>> daily_by_algo;

  for (std::size_t a = 0; a < dump.algos.size(); ++a) {
    const auto& est = dump.estimates[a];
    std::vector<double> per_cycle(cycles);
    std::vector<double> covered(cycles);
    for (std::size_t c = 0; c < cycles; ++c) {
      const auto i = static_cast<Eigen::Index>(c);
      const auto r = rmse(est.col(i), dump.real.col(i));
      per_cycle[c] = r.value;
      covered[c] = grids > 0 ? static_cast<double>(r.evaluated) / grids : 0.0;
    }
    for (const auto& d : daily_rmse(per_cycle)) {
      double cov = 0.0;
      const std::size_t start = d.day * kCyclesPerDay;
      const std::size_t end = std::min(cycles, start + kCyclesPerDay);
      for (std::size_t c = start; c < end; ++c) cov += covered[c];
      t.daily.push_back({dump.algos[a], d.day, d.value, d.cycles, cov / static_cast<double>(end - start), d.partial});
      daily_by_algo[dump.algos[a]].push_back(d.value);
    }
    for (double th : thresholds) {
      const auto counts = valid_estimations(est, dump.real, th);
      for (Eigen::Index g = 0; g < counts.size(); ++g)
        t.valid.push_back({dump.algos[a], static_cast<std::size_t>(g), th, counts[g]});
    }
    t.cycle_rmse.push_back(std::move(per_cycle));
  }

  if (const auto it = daily_by_algo.find(base); it != daily_by_algo.end()) {
    for (const auto& other : dump.algos) {
      if (other == base) continue;
      const auto diff = rmse_difference(it->second, daily_by_algo.at(other));
      for (std::size_t d = 0; d < diff.size(); ++d) t.diff.push_back({d, base + "-" + other, diff[d]});
    }
  }
  return t;
}

std::string format_double(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

void write_truths_csv(std::ostream& os, const TruthDump& dump) {
  os << "cycle,grid,algo,estimate,real\n";
  for (Eigen::Index c = 0; c < dump.real.cols(); ++c)
    for (Eigen::Index g = 0; g < dump.real.rows(); ++g)
      for (std::size_t a = 0; a < dump.algos.size(); ++a)
        os << c << ',' << g << ',' << dump.algos[a] << ',' << format_double(dump.estimates[a](g, c)) << ','
           << format_double(dump.real(g, c)) << '\n';
}

TruthDump read_truths_csv(std::istream& is) {
  struct Row {
    std::size_t cycle, grid, algo;
    double est, real;
  };
  std::vector<Row> rows;
  TruthDump dump;
  std::map<std::string, std::size_t> algo_index;
  std::size_t max_cycle = 0, max_grid = 0;

  const auto number = [](const std::string& s, std::size_t line) {
    if (s.empty()) return kNaN;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line);
    return v;
  };
  const auto integer = [](const std::string& s, std::size_t line) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw ParseError("bad index '" + s + "'", line);
    return v;
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != "cycle,grid,algo,estimate,real") throw ParseError("unexpected truths.csv header", lineno);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw ParseError("expected 5 fields", lineno);
    auto [it, fresh] = algo_index.try_emplace(f[2], dump.algos.size());
    if (fresh) dump.algos.push_back(f[2]);
    Row r{integer(f[0], lineno), integer(f[1], lineno), it->second, number(f[3], lineno), number(f[4], lineno)};
    max_cycle = std::max(max_cycle, r.cycle);
    max_grid = std::max(max_grid, r.grid);
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError("truths.csv has no rows", lineno);
  const auto G = static_cast<Eigen::Index>(max_grid + 1), C = static_cast<Eigen::Index>(max_cycle + 1);
  dump.real = Eigen::MatrixXd::Constant(G, C, kNaN);
  dump.estimates.assign(dump.algos.size(), Eigen::MatrixXd::Constant(G, C, kNaN));
  for (const auto& r : rows) {
    const auto g = static_cast<Eigen::Index>(r.grid), c = static_cast<Eigen::Index>(r.cycle);
    dump.estimates[r.algo](g, c) = r.est;
    dump.real(g, c) = r.real;
  }
  if (dump.real.array().isNaN().any()) throw ParseError("truths.csv is missing real truths", lineno);
  return dump;
}

void write_daily_csv(std::ostream& os, const MetricsTable& t) {
  os << "algo,day,rmse,cycles,coverage,partial\n";
  for (const auto& r : t.daily)
    os << r.algo << ',' << r.day << ',' << format_double(r.rmse) << ',' << r.cycles << ','
       << format_double(r.coverage) << ',' << (r.partial ? 1 : 0) << '\n';
}

void write_valid_csv(std::ostream& os, const MetricsTable& t) {
  os << "algo,grid,threshold,count\n";
  for (const auto& r : t.valid)
    os << r.algo << ',' << r.grid << ',' << format_double(r.threshold) << ',' << r.count << '\n';
}

void write_diff_csv(std::ostream& os, const MetricsTable& t) {
  os << "day,pair,value\n";
  for (const auto& r : t.diff) os << r.day << ',' << r.pair << ',' << format_double(r.value) << '\n';
}

void write_tables(const std::filesystem::path& dir, const MetricsTable& t) {
  std::filesystem::create_directories(dir);
  auto daily = open_out(dir / "rmse_daily.csv");
  write_daily_csv(daily, t);
  auto valid = open_out(dir / "valid.csv");
  write_valid_csv(valid, t);
  auto diff = open_out(dir / "diff.csv");
  write_diff_csv(diff, t);
}

void write_all(const std::filesystem::path& dir, const TruthDump& dump, const MetricsTable& t) {
  write_tables(dir, t);
  auto truths = open_out(dir / "truths.csv");
  write_truths_csv(truths, dump);
}

}  // namespace airq::metrics
