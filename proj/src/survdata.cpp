#include "frailtyscan/survdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "csv_util.hpp"
#include "frailtyscan/errors.hpp"

namespace frailtyscan {

SurvivalDataset::SurvivalDataset(const StudyRegion& region, std::vector<std::size_t> unit,
                                 Eigen::VectorXd time, Eigen::VectorXi event,
                                 Eigen::MatrixXd covariates)
    : unit_(std::move(unit)),
      time_(std::move(time)),
      event_(std::move(event)),
      covariates_(std::move(covariates)) {
  const auto n = static_cast<Eigen::Index>(unit_.size());
  if (time_.size() != n || event_.size() != n)
    throw ValidationError("time/event/unit lengths differ");
  if (covariates_.size() > 0 && covariates_.rows() != n)
    throw ValidationError("covariate row count differs from individual count");
  if (covariates_.size() == 0) covariates_.resize(n, 0);
  unit_counts_.assign(region.size(), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = unit_[static_cast<std::size_t>(i)];
    if (k >= region.size())
      throw ValidationError("unit index out of range at index " + std::to_string(i));
    if (!(time_[i] > 0.0))
      throw ValidationError("non-positive time at index " + std::to_string(i));
    if (event_[i] != 0 && event_[i] != 1)
      throw ValidationError("event must be 0 or 1 at index " + std::to_string(i));
    ++unit_counts_[k];
  }
}

std::size_t SurvivalDataset::n_events() const {
  std::size_t d = 0;
  for (Eigen::Index i = 0; i < event_.size(); ++i) d += event_[i] == 1;
  return d;
}

SurvivalDataset ingest_individuals(const std::string& path, const StudyRegion& region) {
  auto in = detail::open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty individuals file: " + path);
  const auto header = detail::split_csv_line(detail::strip_cr(line));
  if (header.size() < 3 || header[0] != "unit_id" || header[1] != "time" ||
      header[2] != "event")
    throw ValidationError("individuals file must start with header 'unit_id,time,event'");
  for (std::size_t c = 3; c < header.size(); ++c) {
    if (header[c] == "weights")
      throw ValidationError("'weights' column is not supported");
    if (header[c] != "z" + std::to_string(c - 2))
      throw ValidationError("covariate columns must be named z1..zp, got '" + header[c] + "'");
  }
  const std::size_t p = header.size() - 3;

  std::vector<std::size_t> unit;
  std::vector<double> time;
  std::vector<int> event;
  std::vector<double> covariates;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw ValidationError("ragged row (expected " + std::to_string(header.size()) +
                            " fields) at row " + std::to_string(row));
    std::size_t k;
    try {
      k = region.index_of(fields[0]);
    } catch (const ValidationError&) {
      throw ValidationError("unknown unit_id '" + fields[0] + "' at row " +
                            std::to_string(row));
    }
    const double t = detail::parse_double(fields[1], "time", row);
    if (!(t > 0.0))
      throw ValidationError("non-positive time at row " + std::to_string(row));
    const double ev = detail::parse_double(fields[2], "event", row);
    if (ev != 0.0 && ev != 1.0)
      throw ValidationError("event must be 0 or 1 at row " + std::to_string(row));
    unit.push_back(k);
    time.push_back(t);
    event.push_back(static_cast<int>(ev));
    for (std::size_t c = 0; c < p; ++c)
      covariates.push_back(detail::parse_double(fields[3 + c], "covariate", row));
  }
  const auto n = static_cast<Eigen::Index>(unit.size());
  if (n == 0) throw ValidationError("no individuals in " + path);
  Eigen::VectorXd t(n);
  Eigen::VectorXi e(n);
  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    t[i] = time[static_cast<std::size_t>(i)];
    e[i] = event[static_cast<std::size_t>(i)];
    for (std::size_t c = 0; c < p; ++c)
      z(i, static_cast<Eigen::Index>(c)) = covariates[static_cast<std::size_t>(i) * p + c];
  }
  return SurvivalDataset(region, std::move(unit), std::move(t), std::move(e), std::move(z));
}

void write_individuals(const std::string& path, const SurvivalDataset& dataset,
                       const StudyRegion& region) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << "unit_id,time,event";
  for (std::size_t c = 1; c <= dataset.n_covariates(); ++c) out << ",z" << c;
  out << "\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    out << region.unit(dataset.unit_of(i)).id << ',' << dataset.times()[static_cast<Eigen::Index>(i)]
        << ',' << dataset.events()[static_cast<Eigen::Index>(i)];
    for (std::size_t c = 0; c < dataset.n_covariates(); ++c)
      out << ',' << dataset.covariates()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    out << "\n";
  }
}

std::size_t PiecewiseGrid::interval_of(double t) const {
  // t in (cut[I], cut[I+1]] maps to I; times above the last cutpoint are
  // a caller error checked in expand_piecewise.
  const auto it = std::lower_bound(cutpoints.begin() + 1, cutpoints.end(), t);
  return static_cast<std::size_t>(it - (cutpoints.begin() + 1));
}

PiecewiseGrid grid_from_cutpoints(std::vector<double> cutpoints) {
  if (cutpoints.size() < 2) throw ValidationError("grid needs at least one interval");
  if (cutpoints.front() != 0.0) throw ValidationError("grid must start at 0");
  for (std::size_t i = 1; i < cutpoints.size(); ++i)
    if (!(cutpoints[i] > cutpoints[i - 1]))
      throw ValidationError("grid cutpoints must be strictly increasing");
  return PiecewiseGrid{std::move(cutpoints)};
}

PiecewiseGrid build_grid(const SurvivalDataset& dataset) {
  std::vector<double> unique_times(dataset.times().data(),
                                   dataset.times().data() + dataset.times().size());
  std::sort(unique_times.begin(), unique_times.end());
  unique_times.erase(std::unique(unique_times.begin(), unique_times.end()),
                     unique_times.end());
  const std::size_t U = unique_times.size();
  const std::size_t n_T = std::max<std::size_t>(1, U / 20);

  std::vector<double> cut;
  cut.reserve(n_T + 1);
  cut.push_back(0.0);
  for (std::size_t j = 1; j < n_T; ++j) {
    // Linear-interpolation quantile of the unique times at level j/n_T.
    const double h = static_cast<double>(U - 1) * static_cast<double>(j) /
                     static_cast<double>(n_T);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    double q = unique_times[lo];
    if (lo + 1 < U) q += frac * (unique_times[lo + 1] - unique_times[lo]);
    if (q > cut.back()) cut.push_back(q);
  }
  if (unique_times.back() > cut.back()) cut.push_back(unique_times.back());
  return PiecewiseGrid{std::move(cut)};
}

std::vector<PoissonRecord> expand_piecewise(const SurvivalDataset& dataset,
                                            const PiecewiseGrid& grid) {
  const auto& cut = grid.cutpoints;
  std::vector<PoissonRecord> records;
  records.reserve(dataset.n() * 2);
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    const double t = dataset.times()[static_cast<Eigen::Index>(i)];
    if (t > cut.back())
      throw ValidationError("grid does not cover observation time at row " +
                            std::to_string(i + 2));
    const std::size_t last = grid.interval_of(t);
    for (std::size_t I = 0; I <= last; ++I) {
      PoissonRecord r;
      r.individual = i;
      r.interval = I;
      r.unit = dataset.unit_of(i);
      r.exposure = std::min(t, cut[I + 1]) - cut[I];
      r.events = (I == last) ? dataset.events()[static_cast<Eigen::Index>(i)] : 0;
      records.push_back(r);
    }
  }
  return records;
}

}  // namespace frailtyscan
