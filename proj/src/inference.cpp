#include "frailtyscan/inference.hpp"

#include <cmath>

#include "frailtyscan/errors.hpp"
#include "frailtyscan/parallel.hpp"
#include "frailtyscan/rng.hpp"

namespace frailtyscan {

namespace {

Eigen::VectorXd draw_field(const Eigen::LLT<Eigen::MatrixXd>& llt, double alpha_hat,
                           double sigma2_0, std::uint64_t seed, std::uint64_t stream) {
  const Eigen::Index K = llt.matrixL().rows();
  Rng rng(seed, stream);
  Eigen::VectorXd z(K);
  for (Eigen::Index i = 0; i < K; ++i) z[i] = rng.normal();
  // cov(L^{-T} z) = A^{-1} for A = L L^T.
  llt.matrixU().solveInPlace(z);
  return Eigen::VectorXd::Constant(K, alpha_hat) + std::sqrt(sigma2_0) * z;
}

}  // namespace

Eigen::VectorXd sample_gmrf(const NullGenerator& generator, std::size_t replicate_index) {
  Eigen::LLT<Eigen::MatrixXd> llt(generator.A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("precision matrix is not positive definite");
  return draw_field(llt, generator.alpha_hat, generator.sigma2_0_hat, generator.seed,
                    replicate_index);
}

SignificanceReport monte_carlo_pvalue(const detail::ScanContext& context,
                                      const ScanResult& observed,
                                      const MonteCarloOptions& options) {
  if (options.replicates < 1) throw ValidationError("need at least one MC replicate");
  const auto M = static_cast<std::size_t>(options.replicates);

  SignificanceReport report;
  report.lambda_obs = observed.lambda;
  report.null_lambdas.resize(M);

  parallel_for(M, options.threads, [&](std::size_t m) {
    Eigen::VectorXd phi = draw_field(context.cholesky(), observed.alpha_hat,
                                     observed.sigma2_0_hat, options.seed, m);
    try {
      report.null_lambdas[m] = context.max_llr(phi);
    } catch (const DegenerateFieldError&) {
      // One retry on a disjoint stream, then give up.
      phi = draw_field(context.cholesky(), observed.alpha_hat, observed.sigma2_0_hat,
                       options.seed, m + (M << 20));
      report.null_lambdas[m] = context.max_llr(phi);
    }
  });

  const auto count_geq = [&](double value) {
    std::size_t c = 0;
    for (double lambda : report.null_lambdas) c += lambda >= value;
    return c;
  };
  report.p_mlc = static_cast<double>(1 + count_geq(observed.lambda)) /
                 static_cast<double>(M + 1);
  report.p_secondaries.reserve(observed.secondaries.size());
  for (const auto& secondary : observed.secondaries)
    report.p_secondaries.push_back(static_cast<double>(1 + count_geq(secondary.llr)) /
                                   static_cast<double>(M + 1));
  return report;
}

SignificanceReport monte_carlo_pvalue(const GaussianScanInput& input,
                                      const ScanResult& observed,
                                      const MonteCarloOptions& options) {
  detail::ScanContext context(input);
  return monte_carlo_pvalue(context, observed, options);
}

}  // namespace frailtyscan
