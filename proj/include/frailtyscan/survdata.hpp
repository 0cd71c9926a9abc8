#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "frailtyscan/spatial.hpp"

namespace frailtyscan {

// Right-censored individual records, column-oriented. unit[i] indexes the
// StudyRegion the dataset was validated against.
class SurvivalDataset {
public:
  SurvivalDataset(const StudyRegion& region, std::vector<std::size_t> unit,
                  Eigen::VectorXd time, Eigen::VectorXi event,
                  Eigen::MatrixXd covariates);

  std::size_t n() const { return unit_.size(); }
  std::size_t n_covariates() const { return static_cast<std::size_t>(covariates_.cols()); }
  std::size_t unit_of(std::size_t i) const { return unit_[i]; }
  const std::vector<std::size_t>& units() const { return unit_; }
  const Eigen::VectorXd& times() const { return time_; }
  const Eigen::VectorXi& events() const { return event_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const std::vector<std::size_t>& unit_counts() const { return unit_counts_; }
  std::size_t n_events() const;

private:
  std::vector<std::size_t> unit_;
  Eigen::VectorXd time_;
  Eigen::VectorXi event_;
  Eigen::MatrixXd covariates_;  // n x p
  std::vector<std::size_t> unit_counts_;
};

// CSV with header unit_id,time,event[,z1..zp]. Row order is preserved.
SurvivalDataset ingest_individuals(const std::string& path, const StudyRegion& region);

void write_individuals(const std::string& path, const SurvivalDataset& dataset,
                       const StudyRegion& region);

// 0 = t_0 < t_1 < ... < t_{n_T}; the last cutpoint equals the maximum
// observation time. Intervals are (t_{I-1}, t_I].
struct PiecewiseGrid {
  std::vector<double> cutpoints;

  std::size_t n_intervals() const { return cutpoints.size() - 1; }
  // Interval containing t under the right-closed convention.
  std::size_t interval_of(double t) const;
};

// n_T = max(1, floor(U / 20)) with U the number of unique observation times;
// interior cutpoints are quantiles (linear interpolation) of the unique times.
PiecewiseGrid build_grid(const SurvivalDataset& dataset);

PiecewiseGrid grid_from_cutpoints(std::vector<double> cutpoints);

struct PoissonRecord {
  std::size_t individual = 0;
  std::size_t interval = 0;
  std::size_t unit = 0;
  double exposure = 0.0;
  int events = 0;
};

// Piecewise-exponential augmentation: one record per (individual, interval
// with positive time at risk). Exposures sum to follow-up time exactly and
// the event lands in the interval containing the observation time.
std::vector<PoissonRecord> expand_piecewise(const SurvivalDataset& dataset,
                                            const PiecewiseGrid& grid);

}  // namespace frailtyscan
