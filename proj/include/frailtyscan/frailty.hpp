#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "frailtyscan/spatial.hpp"
#include "frailtyscan/survdata.hpp"

namespace frailtyscan {

struct PriorSpec {
  double precision_shape = 1e-3;  // Gamma(shape, rate) on 1/sigma2
  double precision_rate = 1e-3;
  double tau_shape = 1e-3;  // Gamma(shape, rate) on the random-walk precision
  double tau_rate = 1e-3;
  double alpha_w_variance = 1e3;    // N(0, v) on the cluster effect
  double c1_anchor_variance = 1e3;  // diffuse anchor on the baseline level
  // rho carries a Beta(1, 1) prior.
};

enum class FrailtyModel { Car, Iid, Icar };

struct HyperMap {
  double rho = 0.5;
  double sigma2 = 1.0;
  double tau = 10.0;
};

struct LatentField {
  Eigen::VectorXd c;  // baseline log-hazard levels per interval
  Eigen::VectorXd x;  // spatial effects
  std::optional<double> alpha_w;
};

enum class HypothesisKind { Null, Alternative };

struct ModelFit {
  HypothesisKind hypothesis = HypothesisKind::Null;
  std::optional<std::size_t> window_index;
  LatentField mode;   // the Gaussian approximation's mean equals its mode
  HyperMap hyper;     // MAP of the approximate marginal posterior
  Eigen::VectorXd beta;  // estimated under the null when covariates are latent
  double log_marginal = 0.0;
  int newton_iterations = 0;
  int outer_evaluations = 0;

  const LatentField& posterior_mean() const { return mode; }
};

struct FitOptions {
  FrailtyModel model = FrailtyModel::Car;
  HyperMap start{0.5, 1.0, 10.0};
  // Pins the hyperparameters; log_marginal is then the conditional evidence
  // at that point (no hyperprior mass or volume term).
  std::optional<HyperMap> fixed_hyper;
  std::optional<HyperMap> warm_start;
  int max_newton_iterations = 100;
  double newton_grad_tol = 1e-8;
  int nm_max_evaluations = 400;
  double nm_f_tol = 2e-4;
  // Loose spatial tolerance: the posterior is flat in log tau / log sigma2
  // far from the data scale and simplex shrinkage there buys nothing.
  double nm_x_tol = 0.05;
  double nm_simplex_step = 0.4;
  double rho_min = 1e-4;
  double rho_max = 0.999;
  double icar_rho = 0.999;
};

// Laplace fit of the piecewise-exponential shared-frailty model under the
// null (no window) or a single-window alternative. The inner Newton loop
// maximizes the penalized Poisson log-likelihood at fixed hyperparameters;
// the outer Nelder-Mead maximizes the Laplace-approximated marginal
// posterior over (logit rho, log sigma2, log tau).
ModelFit fit_model(const SurvivalDataset& dataset, const StudyRegion& region,
                   const PiecewiseGrid& grid,
                   const std::optional<CandidateWindow>& window, const PriorSpec& priors,
                   const std::optional<Eigen::VectorXd>& beta_fixed = std::nullopt,
                   const FitOptions& options = {});

inline double log_bayes_factor(const ModelFit& alt, const ModelFit& null_fit) {
  return alt.log_marginal - null_fit.log_marginal;
}

struct WindowDiagnostics {
  std::size_t window_index = 0;
  double log_bf = 0.0;
  HyperMap hyper;
  double log_marginal = 0.0;
  int newton_iterations = 0;
  int outer_evaluations = 0;
};

struct FrailtySelection {
  Eigen::VectorXd phi_star;
  double rho_star = 0.0;
  HypothesisKind winner = HypothesisKind::Null;
  std::optional<std::size_t> winner_window;
  std::vector<double> log_bf;  // per window, input order
  std::optional<double> alpha_hat_wstar;
  ModelFit null_fit;
  std::optional<ModelFit> winner_fit;
  std::vector<WindowDiagnostics> diagnostics;
};

struct SelectOptions {
  double bf_threshold = 30.0;
  FrailtyModel model = FrailtyModel::Car;
  unsigned threads = 1;
  bool collect_diagnostics = false;
  FitOptions fit;
};

// Fits the null once (estimating covariate effects), then every window
// alternative with the coefficients frozen at the null estimates, and picks
// the best window by Bayes factor. phi* and rho* come from the winning fit.
FrailtySelection select_frailties(const SurvivalDataset& dataset,
                                  const StudyRegion& region, const PiecewiseGrid& grid,
                                  const PriorSpec& priors,
                                  const std::vector<CandidateWindow>& windows,
                                  const SelectOptions& options = {});

namespace detail {

// Test hook: value and analytic gradient of the penalized Poisson
// log-likelihood at a given latent point and fixed hyperparameters.
struct ObjectiveProbe {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

ObjectiveProbe eval_penalized_objective(const SurvivalDataset& dataset,
                                        const StudyRegion& region,
                                        const PiecewiseGrid& grid,
                                        const std::optional<CandidateWindow>& window,
                                        const PriorSpec& priors,
                                        const std::optional<Eigen::VectorXd>& beta_fixed,
                                        FrailtyModel model, const HyperMap& hyper,
                                        const Eigen::VectorXd& theta);

std::size_t latent_dimension(const SurvivalDataset& dataset, const PiecewiseGrid& grid,
                             const StudyRegion& region, bool has_alpha, bool beta_latent);

}  // namespace detail

}  // namespace frailtyscan
