#include "frailtyscan/frailty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <cstdlib>

#include "frailtyscan/errors.hpp"
#include "frailtyscan/parallel.hpp"
#include "nelder_mead.hpp"

namespace frailtyscan {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Neighbor matrix plus the spectrum of R, shared across all window fits of a
// region. log|A(rho)| = sum log(1 + rho (lambda_i - 1)).
struct SpatialStructure {
  Eigen::MatrixXd R;
  Eigen::VectorXd eigenvalues;

  static SpatialStructure build(const StudyRegion& region) {
    SpatialStructure s;
    s.R = build_neighbor_matrix(region).R;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s.R, Eigen::EigenvaluesOnly);
    s.eigenvalues = solver.eigenvalues();
    return s;
  }

  double logdet_A(double rho) const {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
      const double v = 1.0 + rho * (eigenvalues[i] - 1.0);
      if (!(v > 0.0)) throw NumericalError("A(rho) is not positive definite");
      sum += std::log(v);
    }
    return sum;
  }
};

// Piecewise-exponential rows. With no covariates (or frozen ones sharing a
// zero offset) records collapse to (interval, unit) cells.
struct Rows {
  std::vector<int> interval;
  std::vector<int> unit;
  Eigen::VectorXd events;    // D
  Eigen::VectorXd exposure;  // E
  Eigen::VectorXd offset;    // frozen-beta linear predictor part
  Eigen::MatrixXd Z;         // covariates when beta is latent (else 0 x 0)
  int n_T = 0;
  int K = 0;
  int p_latent = 0;
};

Rows build_rows(const SurvivalDataset& dataset, const StudyRegion& region,
                const PiecewiseGrid& grid,
                const std::optional<Eigen::VectorXd>& beta_fixed) {
  const auto records = expand_piecewise(dataset, grid);
  const int n_T = static_cast<int>(grid.n_intervals());
  const int K = static_cast<int>(region.size());
  const int p = static_cast<int>(dataset.n_covariates());
  if (beta_fixed && static_cast<int>(beta_fixed->size()) != p)
    throw ValidationError("beta_fixed length does not match covariate count");

  Rows rows;
  rows.n_T = n_T;
  rows.K = K;

  if (p == 0) {
    std::vector<double> D(static_cast<std::size_t>(n_T) * K, 0.0);
    std::vector<double> E(static_cast<std::size_t>(n_T) * K, 0.0);
    for (const auto& r : records) {
      const std::size_t cell = r.interval * static_cast<std::size_t>(K) + r.unit;
      D[cell] += r.events;
      E[cell] += r.exposure;
    }
    std::size_t n_cells = 0;
    for (double e : E) n_cells += e > 0.0;
    rows.interval.reserve(n_cells);
    rows.unit.reserve(n_cells);
    rows.events.resize(static_cast<Eigen::Index>(n_cells));
    rows.exposure.resize(static_cast<Eigen::Index>(n_cells));
    rows.offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_cells));
    Eigen::Index out = 0;
    for (int I = 0; I < n_T; ++I)
      for (int k = 0; k < K; ++k) {
        const std::size_t cell = static_cast<std::size_t>(I) * K + k;
        if (!(E[cell] > 0.0)) {
          if (D[cell] > 0.0) throw NumericalError("event with zero exposure");
          continue;
        }
        rows.interval.push_back(I);
        rows.unit.push_back(k);
        rows.events[out] = D[cell];
        rows.exposure[out] = E[cell];
        ++out;
      }
    return rows;
  }

  const auto n_rows = static_cast<Eigen::Index>(records.size());
  rows.interval.resize(records.size());
  rows.unit.resize(records.size());
  rows.events.resize(n_rows);
  rows.exposure.resize(n_rows);
  rows.offset.resize(n_rows);
  if (!beta_fixed) {
    rows.p_latent = p;
    rows.Z.resize(n_rows, p);
  }
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const auto& rec = records[static_cast<std::size_t>(r)];
    rows.interval[static_cast<std::size_t>(r)] = static_cast<int>(rec.interval);
    rows.unit[static_cast<std::size_t>(r)] = static_cast<int>(rec.unit);
    rows.events[r] = rec.events;
    rows.exposure[r] = rec.exposure;
    if (!(rec.exposure > 0.0)) throw NumericalError("record with zero exposure");
    const auto zrow = dataset.covariates().row(static_cast<Eigen::Index>(rec.individual));
    if (beta_fixed) {
      rows.offset[r] = zrow.dot(*beta_fixed);
    } else {
      rows.offset[r] = 0.0;
      rows.Z.row(r) = zrow;
    }
  }
  return rows;
}

struct Layout {
  int n_T = 0, K = 0, p = 0;
  bool has_alpha = false;

  int dim() const { return n_T + K + (has_alpha ? 1 : 0) + p; }
  int c0() const { return 0; }
  int x0() const { return n_T; }
  int a0() const { return n_T + K; }
  int b0() const { return n_T + K + (has_alpha ? 1 : 0); }
  int proper_dim() const { return n_T + K + (has_alpha ? 1 : 0); }
};

// Penalized Poisson log-likelihood over the latent field at fixed
// hyperparameters: Newton inner loop, Laplace pieces for the outer loop.
class Inner {
public:
  Inner(const Rows& rows, const SpatialStructure& spatial, const PriorSpec& priors,
        bool has_alpha, std::vector<char> in_window)
      : rows_(rows), spatial_(spatial), priors_(priors), in_window_(std::move(in_window)) {
    layout_.n_T = rows.n_T;
    layout_.K = rows.K;
    layout_.p = rows.p_latent;
    layout_.has_alpha = has_alpha;
    const int m = layout_.dim();
    grad_.resize(m);
    H_.resize(m, m);
    eta_.resize(rows_.events.size());
    w_.resize(rows_.events.size());
    qc_main_.resize(layout_.n_T);
    qc_sub_.resize(std::max(0, layout_.n_T - 1));
  }

  const Layout& layout() const { return layout_; }

  void set_hyper(const HyperMap& hyper) {
    rho_ = hyper.rho;
    sigma2_ = hyper.sigma2;
    tau_ = hyper.tau;
    logdet_A_ = spatial_.logdet_A(rho_);
    const int n_T = layout_.n_T;
    if (n_T == 1) {
      qc_main_[0] = 1.0 / priors_.c1_anchor_variance;
    } else {
      qc_main_[0] = tau_ + 1.0 / priors_.c1_anchor_variance;
      for (int i = 1; i < n_T - 1; ++i) qc_main_[i] = 2.0 * tau_;
      qc_main_[n_T - 1] = tau_;
      for (int i = 0; i < n_T - 1; ++i) qc_sub_[i] = -tau_;
    }
    // LDL recurrence on the tridiagonal baseline precision.
    logdet_Qc_ = 0.0;
    double d = qc_main_[0];
    logdet_Qc_ += std::log(d);
    for (int i = 1; i < n_T; ++i) {
      const double s = qc_sub_[i - 1];
      d = qc_main_[i] - s * s / d;
      if (!(d > 0.0)) throw NumericalError("baseline precision not positive definite");
      logdet_Qc_ += std::log(d);
    }
  }

  double log_joint(const Eigen::VectorXd& theta) const {
    const auto n = rows_.events.size();
    double loglik = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double eta = linear_predictor(theta, r);
      loglik += rows_.events[r] * eta - rows_.exposure[r] * std::exp(eta);
    }
    return loglik - 0.5 * prior_quadratic(theta);
  }

  // Builds gradient, Hessian and its factorization at theta.
  void assemble(const Eigen::VectorXd& theta) {
    const auto n = rows_.events.size();
    const int m = layout_.dim();
    grad_.setZero();
    H_.setZero();
    f_at_assemble_ = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double eta = linear_predictor(theta, r);
      const double mu = rows_.exposure[r] * std::exp(eta);
      const double resid = rows_.events[r] - mu;
      f_at_assemble_ += rows_.events[r] * eta - mu;
      eta_[r] = eta;
      w_[r] = mu;
      const int ic = layout_.c0() + rows_.interval[static_cast<std::size_t>(r)];
      const int ix = layout_.x0() + rows_.unit[static_cast<std::size_t>(r)];
      grad_[ic] += resid;
      grad_[ix] += resid;
      H_(ic, ic) += mu;
      H_(ix, ix) += mu;
      H_(ic, ix) += mu;
      const bool in_w = layout_.has_alpha &&
                        in_window_[static_cast<std::size_t>(
                            rows_.unit[static_cast<std::size_t>(r)])] != 0;
      if (in_w) {
        const int ia = layout_.a0();
        grad_[ia] += resid;
        H_(ia, ia) += mu;
        H_(std::min(ic, ia), std::max(ic, ia)) += mu;
        H_(std::min(ix, ia), std::max(ix, ia)) += mu;
      }
      if (layout_.p > 0) {
        for (int j = 0; j < layout_.p; ++j) {
          const double z = rows_.Z(r, j);
          const int ib = layout_.b0() + j;
          grad_[ib] += resid * z;
          H_(ic, ib) += mu * z;
          H_(ix, ib) += mu * z;
          if (in_w) H_(layout_.a0(), ib) += mu * z;
          for (int j2 = j; j2 < layout_.p; ++j2)
            H_(ib, layout_.b0() + j2) += mu * z * rows_.Z(r, j2);
        }
      }
    }
    f_at_assemble_ -= 0.5 * prior_quadratic(theta);

    // Prior precision contributions.
    const int c0 = layout_.c0();
    for (int i = 0; i < layout_.n_T; ++i) H_(c0 + i, c0 + i) += qc_main_[i];
    for (int i = 0; i + 1 < layout_.n_T; ++i) H_(c0 + i, c0 + i + 1) += qc_sub_[i];
    const int x0 = layout_.x0();
    const double r_scale = rho_ / sigma2_;
    const double i_scale = (1.0 - rho_) / sigma2_;
    H_.block(x0, x0, layout_.K, layout_.K) += r_scale * spatial_.R;
    H_.block(x0, x0, layout_.K, layout_.K).diagonal().array() += i_scale;
    if (layout_.has_alpha)
      H_(layout_.a0(), layout_.a0()) += 1.0 / priors_.alpha_w_variance;

    // prior gradient: -Q theta
    const auto qc = apply_qc(theta.segment(c0, layout_.n_T));
    grad_.segment(c0, layout_.n_T) -= qc;
    const auto x = theta.segment(x0, layout_.K);
    grad_.segment(x0, layout_.K) -=
        (r_scale * (spatial_.R * x) + i_scale * x);
    if (layout_.has_alpha)
      grad_[layout_.a0()] -= theta[layout_.a0()] / priors_.alpha_w_variance;

    llt_.compute(H_.selfadjointView<Eigen::Upper>());
    if (llt_.info() != Eigen::Success) {
      // One ridge retry for near-singular designs.
      H_.diagonal().array() += 1e-10;
      llt_.compute(H_.selfadjointView<Eigen::Upper>());
      if (llt_.info() != Eigen::Success)
        throw FitError("latent Hessian not positive definite");
    }
    logdet_H_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    (void)m;
  }

  int newton(Eigen::VectorXd& theta, int max_iterations, double grad_tol) {
    double f = log_joint(theta);
    if (!std::isfinite(f)) throw FitError("non-finite objective at start");
    for (int iter = 0; iter < max_iterations; ++iter) {
      assemble(theta);
      if (grad_.lpNorm<Eigen::Infinity>() <= grad_tol) return iter;
      const Eigen::VectorXd step = llt_.solve(grad_);
      // The gradient floor is rounding noise once the attainable objective
      // gain (half the Newton decrement) falls below the evaluation noise.
      const double noise = 1e-10 * std::max(1.0, std::abs(f));
      if (!(grad_.dot(step) > noise)) return iter;
      double t = 1.0;
      double f_new = 0.0;
      bool ok = false;
      while (t >= 1e-10) {
        f_new = log_joint(theta + t * step);
        if (std::isfinite(f_new) && f_new > f - 1e-12) {
          ok = true;
          break;
        }
        t *= 0.5;
      }
      if (!ok) {
        if (grad_.lpNorm<Eigen::Infinity>() < 1e-4) return iter;
        throw FitError("Newton line search failed");
      }
      if (std::getenv("FRAILTYSCAN_NEWTON_TRACE") != nullptr)
        std::fprintf(stderr, "  newton iter=%d f=%.10f |g|=%.3e dec=%.3e t=%.3f\n",
                     iter, f_new, grad_.lpNorm<Eigen::Infinity>(), grad_.dot(step), t);
      theta += t * step;
      f = f_new;
    }
    throw FitError("Newton did not converge within the iteration budget");
  }

  // Laplace-approximated log marginal likelihood at the mode, hyper fixed.
  double laplace_log_ml(const Eigen::VectorXd& theta_hat) const {
    double value = f_at_assemble_;
    value += 0.5 * logdet_Qc_;
    value += 0.5 * (logdet_A_ - layout_.K * std::log(sigma2_));
    if (layout_.has_alpha) value -= 0.5 * std::log(priors_.alpha_w_variance);
    value += 0.5 * layout_.p * kLog2Pi;
    value -= 0.5 * logdet_H_;
    (void)theta_hat;
    return value;
  }

  void gradient_at(const Eigen::VectorXd& theta, Eigen::VectorXd& out) {
    assemble(theta);
    out = grad_;
  }

private:
  double linear_predictor(const Eigen::VectorXd& theta, Eigen::Index r) const {
    const auto rs = static_cast<std::size_t>(r);
    double eta = rows_.offset[r] + theta[layout_.c0() + rows_.interval[rs]] +
                 theta[layout_.x0() + rows_.unit[rs]];
    if (layout_.has_alpha && in_window_[static_cast<std::size_t>(rows_.unit[rs])])
      eta += theta[layout_.a0()];
    if (layout_.p > 0)
      eta += rows_.Z.row(r).dot(theta.segment(layout_.b0(), layout_.p));
    return eta;
  }

  Eigen::VectorXd apply_qc(const Eigen::Ref<const Eigen::VectorXd>& c) const {
    Eigen::VectorXd out(layout_.n_T);
    for (int i = 0; i < layout_.n_T; ++i) {
      double v = qc_main_[i] * c[i];
      if (i > 0) v += qc_sub_[i - 1] * c[i - 1];
      if (i + 1 < layout_.n_T) v += qc_sub_[i] * c[i + 1];
      out[i] = v;
    }
    return out;
  }

  double prior_quadratic(const Eigen::VectorXd& theta) const {
    const auto c = theta.segment(layout_.c0(), layout_.n_T);
    double quad = c.dot(apply_qc(c));
    const auto x = theta.segment(layout_.x0(), layout_.K);
    const double xRx = x.dot(spatial_.R * x);
    quad += (rho_ * xRx + (1.0 - rho_) * x.squaredNorm()) / sigma2_;
    if (layout_.has_alpha) {
      const double a = theta[layout_.a0()];
      quad += a * a / priors_.alpha_w_variance;
    }
    return quad;
  }

  const Rows& rows_;
  const SpatialStructure& spatial_;
  const PriorSpec& priors_;
  std::vector<char> in_window_;
  Layout layout_;

  double rho_ = 0.0, sigma2_ = 1.0, tau_ = 1.0;
  double logdet_A_ = 0.0, logdet_Qc_ = 0.0, logdet_H_ = 0.0;
  double f_at_assemble_ = 0.0;
  std::vector<double> qc_main_, qc_sub_;
  Eigen::VectorXd grad_, eta_, w_;
  Eigen::MatrixXd H_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

// Active hyper coordinates in transformed space:
// [logit rho (CAR only)] [log sigma2] [log tau (n_T >= 2 only)].
struct HyperSpace {
  bool free_rho = true;
  double pinned_rho = 0.0;
  bool has_tau = true;
  double rho_min = 1e-4, rho_max = 0.999;

  int dim() const { return (free_rho ? 1 : 0) + 1 + (has_tau ? 1 : 0); }

  HyperMap to_map(const Eigen::VectorXd& psi) const {
    HyperMap h;
    int i = 0;
    h.rho = free_rho ? 1.0 / (1.0 + std::exp(-psi[i++])) : pinned_rho;
    h.sigma2 = std::exp(psi[i++]);
    h.tau = has_tau ? std::exp(psi[i]) : 1.0;
    return h;
  }

  Eigen::VectorXd from_map(const HyperMap& h) const {
    Eigen::VectorXd psi(dim());
    int i = 0;
    if (free_rho) {
      const double rho = std::min(rho_max, std::max(rho_min, h.rho));
      psi[i++] = std::log(rho / (1.0 - rho));
    }
    psi[i++] = std::log(h.sigma2);
    if (has_tau) psi[i] = std::log(h.tau);
    return psi;
  }

  Eigen::VectorXd lower() const {
    Eigen::VectorXd lo(dim());
    int i = 0;
    if (free_rho) lo[i++] = std::log(rho_min / (1.0 - rho_min));
    lo[i++] = -15.0;
    if (has_tau) lo[i] = -15.0;
    return lo;
  }

  Eigen::VectorXd upper() const {
    Eigen::VectorXd hi(dim());
    int i = 0;
    if (free_rho) hi[i++] = std::log(rho_max / (1.0 - rho_max));
    hi[i++] = 15.0;
    if (has_tau) hi[i] = 15.0;
    return hi;
  }

  // Hyperprior density in the transformed coordinates (Jacobians included).
  double log_prior(const Eigen::VectorXd& psi, const PriorSpec& priors) const {
    double lp = 0.0;
    int i = 0;
    if (free_rho) {
      const double rho = 1.0 / (1.0 + std::exp(-psi[i++]));
      lp += std::log(rho) + std::log(1.0 - rho);  // Beta(1,1) times d rho / d logit
    }
    {
      const double u = psi[i++];
      const double a = priors.precision_shape, b = priors.precision_rate;
      lp += a * std::log(b) - std::lgamma(a) - a * u - b * std::exp(-u);
    }
    if (has_tau) {
      const double v = psi[i];
      const double a = priors.tau_shape, b = priors.tau_rate;
      lp += a * std::log(b) - std::lgamma(a) + a * v - b * std::exp(v);
    }
    return lp;
  }
};

struct OuterState {
  Eigen::VectorXd theta;  // warm latent mode carried across evaluations
  int newton_total = 0;
  int evals = 0;
};

double outer_objective(Inner& inner, const HyperSpace& space, const PriorSpec& priors,
                       const FitOptions& options, const Eigen::VectorXd& psi,
                       OuterState& state) {
  inner.set_hyper(space.to_map(psi));
  state.newton_total +=
      inner.newton(state.theta, options.max_newton_iterations, options.newton_grad_tol);
  ++state.evals;
  return inner.laplace_log_ml(state.theta) + space.log_prior(psi, priors);
}

// Curvature of the outer objective by finite differences; steps flip inward
// at the box so clamped optima still get a usable volume term.
double hyper_volume_logdet(const std::function<double(const Eigen::VectorXd&)>& g,
                           const Eigen::VectorXd& psi_hat, double g0,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const int q = static_cast<int>(psi_hat.size());
  const double h = 0.05;
  Eigen::VectorXd sign(q);
  Eigen::VectorXd g_plus(q), g_minus(q);
  Eigen::MatrixXd Hg = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < q; ++i) {
    const bool up_ok = psi_hat[i] + h <= hi[i];
    const bool dn_ok = psi_hat[i] - h >= lo[i];
    sign[i] = up_ok ? 1.0 : -1.0;
    Eigen::VectorXd p1 = psi_hat, p2 = psi_hat;
    if (up_ok && dn_ok) {
      p1[i] += h;
      p2[i] -= h;
      g_plus[i] = g(p1);
      g_minus[i] = g(p2);
      Hg(i, i) = (g_plus[i] - 2.0 * g0 + g_minus[i]) / (h * h);
    } else {
      p1[i] += sign[i] * h;
      p2[i] += sign[i] * 2.0 * h;
      g_plus[i] = g(p1);
      g_minus[i] = g(p2);
      Hg(i, i) = (g0 - 2.0 * g_plus[i] + g_minus[i]) / (h * h);
    }
  }
  for (int i = 0; i < q; ++i)
    for (int j = i + 1; j < q; ++j) {
      Eigen::VectorXd p = psi_hat;
      p[i] += sign[i] * h;
      p[j] += sign[j] * h;
      const double gij = g(p);
      // g_plus holds g at psi + sign * h along each axis.
      Hg(i, j) = Hg(j, i) =
          (gij - g_plus[i] - g_plus[j] + g0) / (sign[i] * h * sign[j] * h);
    }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(-Hg);
  double logdet = 0.0;
  for (int i = 0; i < q; ++i)
    logdet += std::log(std::max(solver.eigenvalues()[i], 1e-8));
  return logdet;
}

struct FitRequest {
  const Rows* rows = nullptr;
  const SpatialStructure* spatial = nullptr;
  const PriorSpec* priors = nullptr;
  bool has_alpha = false;
  std::vector<char> in_window;
  std::optional<std::size_t> window_index;
  const Eigen::VectorXd* warm_theta = nullptr;
};

ModelFit fit_laplace(const FitRequest& req, const FitOptions& options) {
  const Rows& rows = *req.rows;
  HyperSpace space;
  space.has_tau = rows.n_T >= 2;
  space.rho_min = options.rho_min;
  space.rho_max = options.rho_max;
  switch (options.model) {
    case FrailtyModel::Car:
      space.free_rho = true;
      break;
    case FrailtyModel::Iid:
      space.free_rho = false;
      space.pinned_rho = 0.0;
      break;
    case FrailtyModel::Icar:
      space.free_rho = false;
      space.pinned_rho = options.icar_rho;
      break;
  }

  Inner inner(rows, *req.spatial, *req.priors, req.has_alpha, req.in_window);
  const Layout& layout = inner.layout();

  OuterState state;
  if (req.warm_theta != nullptr && req.warm_theta->size() == layout.dim()) {
    state.theta = *req.warm_theta;
  } else {
    // Start the baseline near the aggregate event rate.
    state.theta = Eigen::VectorXd::Zero(layout.dim());
    const double d_total = rows.events.sum();
    const double e_total = rows.exposure.sum();
    const double c_init = std::log(std::max(d_total, 0.5) / e_total);
    state.theta.segment(layout.c0(), layout.n_T).setConstant(c_init);
  }

  ModelFit fit;
  fit.hypothesis = req.has_alpha ? HypothesisKind::Alternative : HypothesisKind::Null;
  fit.window_index = req.window_index;

  try {
    if (options.fixed_hyper) {
      inner.set_hyper(*options.fixed_hyper);
      fit.newton_iterations = inner.newton(state.theta, options.max_newton_iterations,
                                           options.newton_grad_tol);
      fit.hyper = *options.fixed_hyper;
      fit.log_marginal = inner.laplace_log_ml(state.theta);
      fit.outer_evaluations = 0;
    } else {
      const HyperMap start = options.warm_start.value_or(options.start);
      Eigen::VectorXd psi0 = space.from_map(start);
      const Eigen::VectorXd lo = space.lower();
      const Eigen::VectorXd hi = space.upper();
      const auto g = [&](const Eigen::VectorXd& psi) {
        return outer_objective(inner, space, *req.priors, options, psi, state);
      };
      const auto nm = detail::nelder_mead_maximize(
          g, psi0, lo, hi, options.nm_simplex_step, options.nm_max_evaluations,
          options.nm_f_tol, options.nm_x_tol);
      // Re-evaluate at the chosen point so the inner state matches it.
      const double g0 = g(nm.x);
      const double logdet = hyper_volume_logdet(g, nm.x, g0, lo, hi);
      const double g_final = g(nm.x);
      fit.hyper = space.to_map(nm.x);
      fit.log_marginal =
          g_final + 0.5 * space.dim() * kLog2Pi - 0.5 * logdet;
      fit.newton_iterations = state.newton_total;
      fit.outer_evaluations = state.evals;
    }
  } catch (const FitError& e) {
    throw FitError(std::string(e.what()) +
                       (req.window_index
                            ? " (window " + std::to_string(*req.window_index) + ")"
                            : std::string(" (null fit)")),
                   req.window_index ? static_cast<long>(*req.window_index) : -1);
  }

  fit.mode.c = state.theta.segment(layout.c0(), layout.n_T);
  fit.mode.x = state.theta.segment(layout.x0(), layout.K);
  if (req.has_alpha) fit.mode.alpha_w = state.theta[layout.a0()];
  if (layout.p > 0) fit.beta = state.theta.segment(layout.b0(), layout.p);
  return fit;
}

std::vector<char> window_mask(std::size_t K, const CandidateWindow& window) {
  std::vector<char> mask(K, 0);
  for (std::size_t k : window.members) mask[k] = 1;
  return mask;
}

}  // namespace

ModelFit fit_model(const SurvivalDataset& dataset, const StudyRegion& region,
                   const PiecewiseGrid& grid,
                   const std::optional<CandidateWindow>& window, const PriorSpec& priors,
                   const std::optional<Eigen::VectorXd>& beta_fixed,
                   const FitOptions& options) {
  const SpatialStructure spatial = SpatialStructure::build(region);
  const Rows rows = build_rows(dataset, region, grid, beta_fixed);
  FitRequest req;
  req.rows = &rows;
  req.spatial = &spatial;
  req.priors = &priors;
  req.has_alpha = window.has_value();
  req.in_window =
      window ? window_mask(region.size(), *window) : std::vector<char>(region.size(), 0);
  return fit_laplace(req, options);
}

FrailtySelection select_frailties(const SurvivalDataset& dataset,
                                  const StudyRegion& region, const PiecewiseGrid& grid,
                                  const PriorSpec& priors,
                                  const std::vector<CandidateWindow>& windows,
                                  const SelectOptions& options) {
  if (windows.empty()) throw ValidationError("candidate window set is empty");
  if (!(options.bf_threshold > 0.0))
    throw ValidationError("bf_threshold must be positive");

  const SpatialStructure spatial = SpatialStructure::build(region);
  const Rows rows_null = build_rows(dataset, region, grid, std::nullopt);

  FitRequest null_req;
  null_req.rows = &rows_null;
  null_req.spatial = &spatial;
  null_req.priors = &priors;
  null_req.has_alpha = false;
  null_req.in_window.assign(region.size(), 0);
  FrailtySelection selection;
  selection.null_fit = fit_laplace(null_req, options.fit);

  // Alternative fits share one row set: coefficients frozen at the null
  // estimates turn covariates into offsets.
  std::optional<Eigen::VectorXd> beta_fixed;
  if (dataset.n_covariates() > 0) beta_fixed = selection.null_fit.beta;
  const Rows rows_alt = dataset.n_covariates() > 0
                            ? build_rows(dataset, region, grid, beta_fixed)
                            : rows_null;

  // Window alternatives start at the null optimum with a small simplex;
  // most windows carry no signal and converge within a couple dozen steps.
  FitOptions alt_options = options.fit;
  alt_options.warm_start = selection.null_fit.hyper;
  alt_options.nm_simplex_step = 0.05;
  alt_options.nm_f_tol = 5e-4;
  alt_options.nm_max_evaluations = 100;

  const Layout alt_layout{static_cast<int>(grid.n_intervals()),
                          static_cast<int>(region.size()), 0, true};
  Eigen::VectorXd warm_theta = Eigen::VectorXd::Zero(alt_layout.dim());
  warm_theta.segment(0, alt_layout.n_T) = selection.null_fit.mode.c;
  warm_theta.segment(alt_layout.n_T, alt_layout.K) = selection.null_fit.mode.x;

  std::vector<ModelFit> fits(windows.size());
  parallel_for(windows.size(), options.threads, [&](std::size_t wi) {
    FitRequest req;
    req.rows = &rows_alt;
    req.spatial = &spatial;
    req.priors = &priors;
    req.has_alpha = true;
    req.in_window = window_mask(region.size(), windows[wi]);
    req.window_index = wi;
    req.warm_theta = &warm_theta;
    fits[wi] = fit_laplace(req, alt_options);
  });

  selection.log_bf.resize(windows.size());
  std::size_t best = 0;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    selection.log_bf[wi] = log_bayes_factor(fits[wi], selection.null_fit);
    if (selection.log_bf[wi] > selection.log_bf[best]) best = wi;
  }

  const double log_threshold = std::log(options.bf_threshold);
  if (selection.log_bf[best] >= log_threshold) {
    selection.winner = HypothesisKind::Alternative;
    selection.winner_window = best;
    selection.winner_fit = fits[best];
    selection.alpha_hat_wstar = fits[best].mode.alpha_w;
    selection.rho_star = fits[best].hyper.rho;
    Eigen::VectorXd phi = fits[best].mode.x;
    for (std::size_t k : windows[best].members)
      phi[static_cast<Eigen::Index>(k)] += *fits[best].mode.alpha_w;
    selection.phi_star = std::move(phi);
  } else {
    selection.winner = HypothesisKind::Null;
    selection.rho_star = selection.null_fit.hyper.rho;
    selection.phi_star = selection.null_fit.mode.x;
  }

  if (options.collect_diagnostics) {
    selection.diagnostics.resize(windows.size());
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
      WindowDiagnostics d;
      d.window_index = wi;
      d.log_bf = selection.log_bf[wi];
      d.hyper = fits[wi].hyper;
      d.log_marginal = fits[wi].log_marginal;
      d.newton_iterations = fits[wi].newton_iterations;
      d.outer_evaluations = fits[wi].outer_evaluations;
      selection.diagnostics[wi] = d;
    }
  }
  return selection;
}

namespace detail {

ObjectiveProbe eval_penalized_objective(const SurvivalDataset& dataset,
                                        const StudyRegion& region,
                                        const PiecewiseGrid& grid,
                                        const std::optional<CandidateWindow>& window,
                                        const PriorSpec& priors,
                                        const std::optional<Eigen::VectorXd>& beta_fixed,
                                        FrailtyModel model, const HyperMap& hyper,
                                        const Eigen::VectorXd& theta) {
  (void)model;
  const SpatialStructure spatial = SpatialStructure::build(region);
  const Rows rows = build_rows(dataset, region, grid, beta_fixed);
  Inner inner(rows, spatial, priors, window.has_value(),
              window ? window_mask(region.size(), *window)
                     : std::vector<char>(region.size(), 0));
  inner.set_hyper(hyper);
  ObjectiveProbe probe;
  probe.value = inner.log_joint(theta);
  inner.gradient_at(theta, probe.gradient);
  return probe;
}

std::size_t latent_dimension(const SurvivalDataset& dataset, const PiecewiseGrid& grid,
                             const StudyRegion& region, bool has_alpha,
                             bool beta_latent) {
  return grid.n_intervals() + region.size() + (has_alpha ? 1 : 0) +
         (beta_latent ? dataset.n_covariates() : 0);
}

}  // namespace detail

}  // namespace frailtyscan
