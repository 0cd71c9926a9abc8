#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <limits>
#include <vector>

#include "frailtyscan/spatial.hpp"

namespace frailtyscan {

// Inputs for the Gaussian scan over the estimated frailties. The sigma2
// slot of `precision` is not used here; only A(rho*) matters.
struct GaussianScanInput {
  Eigen::VectorXd phi_star;
  PrecisionModel precision;
  std::vector<CandidateWindow> windows;
};

struct WindowScore {
  std::size_t window_index = 0;
  double alpha_w_hat = 0.0;
  double alpha_wc_hat = 0.0;
  double sigma2_w_hat = 0.0;
  double llr = 0.0;
  bool degenerate = false;  // sigma2_w_hat collapsed to zero
};

struct ScanResult {
  double lambda = 0.0;
  WindowScore mlc;
  std::vector<WindowScore> secondaries;  // pairwise unit-disjoint, LLR-descending
  double alpha_hat = 0.0;                // null mean
  double sigma2_0_hat = 0.0;             // null variance
  std::vector<WindowScore> all_scores;   // per window, in input order
};

// Closed-form MLEs under the null: alpha_hat = (1'A phi)/(1'A 1) and
// sigma2_0 = (phi'A phi - 2 alpha 1'A phi + alpha^2 1'A 1)/K.
// Throws DegenerateFieldError when the field is constant (sigma2_0 == 0).
std::pair<double, double> gls_null_estimates(const Eigen::VectorXd& phi_star,
                                             const Eigen::MatrixXd& A);

struct AltEstimates {
  double alpha_w = 0.0;
  double alpha_wc = 0.0;
  double sigma2_w = 0.0;
};

// Closed-form MLEs under the window alternative (two-mean generalized
// least squares); w must be a non-empty strict subset of the units.
AltEstimates gls_alt_estimates(const Eigen::VectorXd& phi_star, const Eigen::MatrixXd& A,
                               const std::vector<std::size_t>& window_members);

enum class SecondaryRule { UnitDisjoint, CenterOutsideMlc };

struct ScanOptions {
  SecondaryRule secondary_rule = SecondaryRule::UnitDisjoint;
  std::size_t max_secondaries = 5;
};

// Scores every window, takes Lambda = max LLR, the MLC = argmax (ties broken
// by smaller window then lexically smaller center id), and greedy
// non-overlapping secondaries in LLR order.
ScanResult scan_all(const GaussianScanInput& input, const ScanOptions& options = {});

namespace detail {

// Precomputed per-(A, W) quantities so repeated scans over simulated fields
// cost O(K deg + sum |w|) each. Shared by scan_all and the Monte Carlo loop.
class ScanContext {
public:
  ScanContext(const StudyRegion& region, const GaussianScanInput& input);
  // Region-free variant; builds adjacency structure from A itself.
  explicit ScanContext(const GaussianScanInput& input);

  ScanResult scan(const Eigen::VectorXd& phi, const ScanOptions& options) const;
  // Lambda only; no ranking or secondary selection.
  double max_llr(const Eigen::VectorXd& phi) const;
  const Eigen::LLT<Eigen::MatrixXd>& cholesky() const { return llt_; }
  const GaussianScanInput& input() const { return input_; }

private:
  void prepare();

  GaussianScanInput input_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double one_A_one_ = 0.0;
  std::vector<double> s_ww_;  // 1_w' A 1_w per window
  std::vector<double> s_w1_;  // 1_w' A 1 per window
  Eigen::Index K_ = 0;
};

}  // namespace detail

}  // namespace frailtyscan
