#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "frailtyscan/spatial.hpp"
#include "frailtyscan/survdata.hpp"

namespace frailtyscan {

enum class BaselineMethod { Exponential, Logrank };

struct BaselineSecondary {
  std::size_t window_index = 0;
  double statistic = 0.0;
  double p_value = 1.0;
};

struct BaselineScanResult {
  BaselineMethod method = BaselineMethod::Exponential;
  std::size_t mlc_window = 0;
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<BaselineSecondary> secondaries;
  std::vector<double> window_statistics;  // observed, per window
  std::vector<double> null_statistics;    // permutation maxima
};

struct BaselineOptions {
  int permutations = 999;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t max_secondaries = 5;
  // Per-individual log risk scores carried as an offset (log-rank adjustment).
  std::optional<Eigen::VectorXd> offsets;
};

// Per-window likelihood ratio of the one-parameter exponential model:
// d_in ln(d_in/S_in) + d_out ln(d_out/S_out) - d ln(d/S). Significance by
// random labelling: (time, event) pairs permuted across individuals.
BaselineScanResult exponential_scan(const SurvivalDataset& dataset,
                                    const std::vector<CandidateWindow>& windows,
                                    const BaselineOptions& options = {});

// Per-window two-group log-rank chi-square (O - E)^2 / V with the standard
// hypergeometric variance, optionally risk-weighted by exp(offset).
BaselineScanResult logrank_scan(const SurvivalDataset& dataset,
                                const std::vector<CandidateWindow>& windows,
                                const BaselineOptions& options = {});

struct ExponentialRegression {
  double intercept = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // over (intercept, beta)
};

ExponentialRegression fit_exponential_regression(const SurvivalDataset& dataset);

struct CoxModel {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  double log_likelihood = 0.0;
};

// Cox partial likelihood with Breslow tie handling.
CoxModel fit_cox(const Eigen::VectorXd& times, const Eigen::VectorXi& events,
                 const Eigen::MatrixXd& covariates, int max_iterations = 50);

struct CovariateAdjustment {
  BaselineMethod method = BaselineMethod::Exponential;
  Eigen::VectorXd beta;
  // Exponential route: times rescaled by exp(beta'Z).
  std::optional<SurvivalDataset> adjusted;
  // Log-rank route: per-individual offsets beta'Z.
  std::optional<Eigen::VectorXd> offsets;
};

CovariateAdjustment adjust_covariates(const SurvivalDataset& dataset,
                                      const StudyRegion& region, BaselineMethod method);

// Hazard ratio of a detected cluster from a Cox model with the cluster
// indicator alongside the confounders.
double cluster_hazard_ratio(const SurvivalDataset& dataset,
                            const std::vector<std::size_t>& cluster_units);

}  // namespace frailtyscan
