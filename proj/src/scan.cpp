#include "frailtyscan/scan.hpp"

#include <algorithm>
#include <cmath>

#include "frailtyscan/errors.hpp"

namespace frailtyscan {

namespace {

// Degeneracy cutoff relative to the scale of the quadratic form.
bool is_degenerate(double sigma2, double scale) {
  return !(sigma2 > 1e-14 * std::max(1e-300, scale));
}

}  // namespace

std::pair<double, double> gls_null_estimates(const Eigen::VectorXd& phi_star,
                                             const Eigen::MatrixXd& A) {
  const auto K = phi_star.size();
  const Eigen::VectorXd Aphi = A * phi_star;
  const Eigen::VectorXd Aone = A.rowwise().sum();
  const double one_A_one = Aone.sum();
  const double one_A_phi = Aphi.sum();
  const double phi_A_phi = phi_star.dot(Aphi);
  const double alpha = one_A_phi / one_A_one;
  double sigma2 =
      (phi_A_phi - 2.0 * alpha * one_A_phi + alpha * alpha * one_A_one) /
      static_cast<double>(K);
  const double scale = (std::abs(phi_A_phi) + alpha * alpha * one_A_one) /
                       static_cast<double>(K);
  if (is_degenerate(sigma2, scale))
    throw DegenerateFieldError("constant frailty field: null variance is zero");
  return {alpha, sigma2};
}

AltEstimates gls_alt_estimates(const Eigen::VectorXd& phi_star, const Eigen::MatrixXd& A,
                               const std::vector<std::size_t>& window_members) {
  const auto K = phi_star.size();
  if (window_members.empty() ||
      window_members.size() >= static_cast<std::size_t>(K))
    throw ValidationError("window must be a non-empty strict subset of units");
  Eigen::VectorXd ind_w = Eigen::VectorXd::Zero(K);
  for (std::size_t k : window_members) ind_w[static_cast<Eigen::Index>(k)] = 1.0;
  const Eigen::VectorXd ind_c = Eigen::VectorXd::Ones(K) - ind_w;

  const Eigen::VectorXd A_w = A * ind_w;
  const Eigen::VectorXd A_c = A * ind_c;
  const double s_ww = ind_w.dot(A_w);
  const double s_cc = ind_c.dot(A_c);
  const double s_wc = ind_w.dot(A_c);
  const double t_w = A_w.dot(phi_star);
  const double t_c = A_c.dot(phi_star);

  const double denom = s_cc - s_wc * s_wc / s_ww;
  if (!(denom > 0.0))
    throw NumericalError("singular system in window estimates");
  AltEstimates est;
  est.alpha_wc = (t_c - t_w * s_wc / s_ww) / denom;
  est.alpha_w = (t_w - est.alpha_wc * s_wc) / s_ww;
  const Eigen::VectorXd resid = phi_star - est.alpha_w * ind_w - est.alpha_wc * ind_c;
  est.sigma2_w = resid.dot(A * resid) / static_cast<double>(K);
  if (est.sigma2_w < 0.0) est.sigma2_w = 0.0;
  return est;
}

namespace detail {

ScanContext::ScanContext(const GaussianScanInput& input) : input_(input) { prepare(); }

ScanContext::ScanContext(const StudyRegion&, const GaussianScanInput& input)
    : input_(input) {
  prepare();
}

void ScanContext::prepare() {
  const Eigen::MatrixXd& A = input_.precision.A;
  K_ = A.rows();
  if (input_.phi_star.size() != K_)
    throw ValidationError("phi_star length does not match precision matrix");
  llt_.compute(A);
  if (llt_.info() != Eigen::Success)
    throw NumericalError("precision matrix is not positive definite");
  const Eigen::VectorXd Aone = A.rowwise().sum();
  one_A_one_ = Aone.sum();

  s_ww_.resize(input_.windows.size());
  s_w1_.resize(input_.windows.size());
  for (std::size_t wi = 0; wi < input_.windows.size(); ++wi) {
    const auto& members = input_.windows[wi].members;
    if (members.empty() || members.size() >= static_cast<std::size_t>(K_))
      throw ValidationError("window " + std::to_string(wi) +
                            " is not a strict non-empty subset of units");
    double sww = 0.0, sw1 = 0.0;
    for (std::size_t k : members) {
      const auto ki = static_cast<Eigen::Index>(k);
      sw1 += Aone[ki];
      for (std::size_t l : members) sww += A(ki, static_cast<Eigen::Index>(l));
    }
    s_ww_[wi] = sww;
    s_w1_[wi] = sw1;
  }
}

ScanResult ScanContext::scan(const Eigen::VectorXd& phi, const ScanOptions& options) const {
  const auto K = static_cast<double>(K_);
  const Eigen::VectorXd Aphi = input_.precision.A * phi;
  const double one_A_phi = Aphi.sum();
  const double phi_A_phi = phi.dot(Aphi);

  ScanResult result;
  result.alpha_hat = one_A_phi / one_A_one_;
  result.sigma2_0_hat = (phi_A_phi - 2.0 * result.alpha_hat * one_A_phi +
                         result.alpha_hat * result.alpha_hat * one_A_one_) /
                        K;
  const double scale =
      (std::abs(phi_A_phi) + result.alpha_hat * result.alpha_hat * one_A_one_) / K;
  if (is_degenerate(result.sigma2_0_hat, scale))
    throw DegenerateFieldError("constant frailty field: null variance is zero");

  result.all_scores.resize(input_.windows.size());
  for (std::size_t wi = 0; wi < input_.windows.size(); ++wi) {
    WindowScore score;
    score.window_index = wi;
    double t_w = 0.0;
    for (std::size_t k : input_.windows[wi].members)
      t_w += Aphi[static_cast<Eigen::Index>(k)];
    const double s_ww = s_ww_[wi];
    const double s_wc = s_w1_[wi] - s_ww;
    const double s_cc = one_A_one_ - 2.0 * s_w1_[wi] + s_ww;
    const double t_c = one_A_phi - t_w;
    const double denom = s_cc - s_wc * s_wc / s_ww;
    if (!(denom > 0.0))
      throw NumericalError("singular system in window " + std::to_string(wi));
    score.alpha_wc_hat = (t_c - t_w * s_wc / s_ww) / denom;
    score.alpha_w_hat = (t_w - score.alpha_wc_hat * s_wc) / s_ww;
    double s2w = (phi_A_phi - 2.0 * score.alpha_w_hat * t_w -
                  2.0 * score.alpha_wc_hat * t_c +
                  score.alpha_w_hat * score.alpha_w_hat * s_ww +
                  2.0 * score.alpha_w_hat * score.alpha_wc_hat * s_wc +
                  score.alpha_wc_hat * score.alpha_wc_hat * s_cc) /
                 K;
    if (s2w < 0.0) s2w = 0.0;
    score.sigma2_w_hat = s2w;
    if (is_degenerate(s2w, scale)) {
      score.degenerate = true;
      score.llr = std::numeric_limits<double>::infinity();
    } else {
      score.llr = 0.5 * K * std::log(result.sigma2_0_hat / s2w);
    }
    result.all_scores[wi] = score;
  }

  // Rank: larger LLR first, ties to the smaller window, then input order
  // (windows from enumerate_windows arrive sorted by center id and radius).
  std::vector<std::size_t> order(result.all_scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& sa = result.all_scores[a];
    const auto& sb = result.all_scores[b];
    if (sa.llr != sb.llr) return sa.llr > sb.llr;
    const std::size_t na = input_.windows[a].members.size();
    const std::size_t nb = input_.windows[b].members.size();
    if (na != nb) return na < nb;
    return a < b;
  });

  result.mlc = result.all_scores[order[0]];
  result.lambda = result.mlc.llr;

  std::vector<char> covered(static_cast<std::size_t>(K_), 0);
  for (std::size_t k : input_.windows[result.mlc.window_index].members) covered[k] = 1;
  std::vector<char> in_mlc = covered;
  for (std::size_t oi = 1; oi < order.size(); ++oi) {
    if (result.secondaries.size() >= options.max_secondaries) break;
    const auto& score = result.all_scores[order[oi]];
    if (!(score.llr > 0.0)) break;
    const auto& members = input_.windows[score.window_index].members;
    bool ok = true;
    if (options.secondary_rule == SecondaryRule::UnitDisjoint) {
      for (std::size_t k : members)
        if (covered[k]) {
          ok = false;
          break;
        }
    } else {
      ok = !in_mlc[input_.windows[score.window_index].center];
    }
    if (!ok) continue;
    for (std::size_t k : members) covered[k] = 1;
    result.secondaries.push_back(score);
  }
  return result;
}

double ScanContext::max_llr(const Eigen::VectorXd& phi) const {
  const auto K = static_cast<double>(K_);
  const Eigen::VectorXd Aphi = input_.precision.A * phi;
  const double one_A_phi = Aphi.sum();
  const double phi_A_phi = phi.dot(Aphi);
  const double alpha = one_A_phi / one_A_one_;
  const double sigma2_0 =
      (phi_A_phi - 2.0 * alpha * one_A_phi + alpha * alpha * one_A_one_) / K;
  const double scale = (std::abs(phi_A_phi) + alpha * alpha * one_A_one_) / K;
  if (is_degenerate(sigma2_0, scale))
    throw DegenerateFieldError("constant frailty field: null variance is zero");

  double best = 0.0;
  for (std::size_t wi = 0; wi < input_.windows.size(); ++wi) {
    double t_w = 0.0;
    for (std::size_t k : input_.windows[wi].members)
      t_w += Aphi[static_cast<Eigen::Index>(k)];
    const double s_ww = s_ww_[wi];
    const double s_wc = s_w1_[wi] - s_ww;
    const double s_cc = one_A_one_ - 2.0 * s_w1_[wi] + s_ww;
    const double t_c = one_A_phi - t_w;
    const double denom = s_cc - s_wc * s_wc / s_ww;
    if (!(denom > 0.0))
      throw NumericalError("singular system in window " + std::to_string(wi));
    const double alpha_wc = (t_c - t_w * s_wc / s_ww) / denom;
    const double alpha_w = (t_w - alpha_wc * s_wc) / s_ww;
    double s2w = (phi_A_phi - 2.0 * alpha_w * t_w - 2.0 * alpha_wc * t_c +
                  alpha_w * alpha_w * s_ww + 2.0 * alpha_w * alpha_wc * s_wc +
                  alpha_wc * alpha_wc * s_cc) /
                 K;
    if (s2w < 0.0) s2w = 0.0;
    const double llr = is_degenerate(s2w, scale)
                           ? std::numeric_limits<double>::infinity()
                           : 0.5 * K * std::log(sigma2_0 / s2w);
    if (llr > best) best = llr;
  }
  return best;
}

}  // namespace detail

ScanResult scan_all(const GaussianScanInput& input, const ScanOptions& options) {
  detail::ScanContext context(input);
  return context.scan(input.phi_star, options);
}

}  // namespace frailtyscan
