#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "frailtyscan/scan.hpp"

namespace frailtyscan {

// Draws phi ~ N(alpha_hat * 1, sigma2_0 * A^{-1}) via the Cholesky factor of
// A. Replicate draws are indexed so parallel and serial runs agree.
struct NullGenerator {
  double alpha_hat = 0.0;
  double sigma2_0_hat = 1.0;
  Eigen::MatrixXd A;
  std::uint64_t seed = 0;
  int replicates = 999;
};

Eigen::VectorXd sample_gmrf(const NullGenerator& generator, std::size_t replicate_index);

struct SignificanceReport {
  double lambda_obs = 0.0;
  std::vector<double> null_lambdas;
  double p_mlc = 1.0;
  std::vector<double> p_secondaries;  // against the same null Lambda distribution
};

struct MonteCarloOptions {
  int replicates = 999;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

// p_hat = (1 + #{Lambda^(m) >= Lambda}) / (M + 1); secondary clusters are
// compared against the same max-based null distribution.
SignificanceReport monte_carlo_pvalue(const GaussianScanInput& input,
                                      const ScanResult& observed,
                                      const MonteCarloOptions& options);

// Variant reusing a prepared context (the simulation loop calls this).
SignificanceReport monte_carlo_pvalue(const detail::ScanContext& context,
                                      const ScanResult& observed,
                                      const MonteCarloOptions& options);

}  // namespace frailtyscan
