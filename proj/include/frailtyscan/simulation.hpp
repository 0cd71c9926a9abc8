#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "frailtyscan/spatial.hpp"
#include "frailtyscan/survdata.hpp"

namespace frailtyscan {

// Self-contained stand-ins for the study geographies: square lattices with
// rook adjacency, a planted contiguous cluster, and fixed per-unit counts.
struct BuiltinMap {
  StudyRegion region;
  std::vector<std::size_t> cluster_units;
  std::vector<std::size_t> unit_counts;
};

StudyRegion make_lattice_region(std::size_t rows, std::size_t cols,
                                std::size_t n_units);

// 169 units (13x13), 1690 individuals, 14-unit cluster holding 135 of them.
BuiltinMap builtin_map169();

// 94 units (10-wide lattice), 940 individuals, 8-unit cluster holding 73.
BuiltinMap builtin_map94();

// One draw of phi ~ N(alpha * 1_w, sigma2 [rho R + (1 - rho) I]^{-1}).
Eigen::VectorXd generate_frailty_field(const StudyRegion& region,
                                       const std::vector<std::size_t>& cluster_units,
                                       double alpha, double rho, double sigma2,
                                       std::uint64_t seed);

// Inverse-transform draws T = -2 ln(1 - u) exp(-phi_k); everyone observed.
SurvivalDataset generate_survival_times(const StudyRegion& region,
                                        const Eigen::VectorXd& field,
                                        const std::vector<std::size_t>& unit_counts,
                                        std::uint64_t seed);

// End-of-study time set to the empirical (1 - target) quantile; later
// observations are cut there and censored.
SurvivalDataset apply_administrative_censoring(const StudyRegion& region,
                                               const SurvivalDataset& dataset,
                                               double target_proportion);

enum class ExperimentMethod { Car, Iid, Icar, Exponential, Logrank };

std::string method_name(ExperimentMethod method);
std::optional<ExperimentMethod> method_from_name(const std::string& name);

struct SimulationConfig {
  std::string region_name = "map169";  // map169 | map94 | custom
  std::optional<std::string> units_path;
  std::optional<std::string> adjacency_path;
  std::vector<std::string> cluster_unit_ids;  // custom regions
  std::size_t custom_individuals_per_unit = 10;
  std::vector<double> alpha_grid{0.0};
  std::vector<double> rho_grid{0.0};
  double sigma2 = 1.0;
  std::vector<double> censoring_targets{0.0};
  int replicates = 100;
  int mc_replicates = 999;
  double bf_threshold = 30.0;
  double level = 0.05;
  std::uint64_t seed = 1;
};

struct MetricsCell {
  double alpha = 0.0;
  double rho = 0.0;
  double censoring = 0.0;
  int replicates_run = 0;
  int failures = 0;
  int rejections = 0;
  double rejection_rate = 0.0;  // type I error when alpha == 0, else power
  double tpr = 0.0;             // over rejecting replicates
  double fpr = 0.0;
  double ppv = 0.0;
};

struct MetricsReport {
  ExperimentMethod method = ExperimentMethod::Car;
  SimulationConfig config;
  std::vector<MetricsCell> cells;
};

MetricsReport run_experiment(const SimulationConfig& config, ExperimentMethod method,
                             unsigned threads = 1);

}  // namespace frailtyscan
