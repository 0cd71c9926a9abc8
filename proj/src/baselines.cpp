#include "frailtyscan/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "frailtyscan/errors.hpp"
#include "frailtyscan/parallel.hpp"
#include "frailtyscan/rng.hpp"

namespace frailtyscan {

namespace {

// Slots are the (time, event) value pairs sorted by time ascending; a
// permutation re-deals individuals (units, weights) onto the fixed slots.
struct SlotValues {
  std::vector<double> time;
  std::vector<int> event;
  std::vector<std::size_t> sorted_to_original;  // slot -> original row
};

SlotValues make_slots(const SurvivalDataset& dataset) {
  const std::size_t n = dataset.n();
  SlotValues slots;
  slots.sorted_to_original.resize(n);
  std::iota(slots.sorted_to_original.begin(), slots.sorted_to_original.end(), 0u);
  std::sort(slots.sorted_to_original.begin(), slots.sorted_to_original.end(),
            [&](std::size_t a, std::size_t b) {
              const double ta = dataset.times()[static_cast<Eigen::Index>(a)];
              const double tb = dataset.times()[static_cast<Eigen::Index>(b)];
              if (ta != tb) return ta < tb;
              return a < b;
            });
  slots.time.resize(n);
  slots.event.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    slots.time[s] = dataset.times()[static_cast<Eigen::Index>(slots.sorted_to_original[s])];
    slots.event[s] = dataset.events()[static_cast<Eigen::Index>(slots.sorted_to_original[s])];
  }
  return slots;
}

// Greedy unit-disjoint secondaries in statistic order; index 0 is the MLC.
std::vector<std::size_t> rank_clusters(const std::vector<double>& stats,
                                       const std::vector<CandidateWindow>& windows,
                                       std::size_t n_units, std::size_t max_secondaries) {
  std::vector<std::size_t> order(stats.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (stats[a] != stats[b]) return stats[a] > stats[b];
    const std::size_t na = windows[a].members.size();
    const std::size_t nb = windows[b].members.size();
    if (na != nb) return na < nb;
    return a < b;
  });
  std::vector<std::size_t> kept;
  std::vector<char> covered(n_units, 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t wi = order[oi];
    if (!kept.empty() && !(stats[wi] > 0.0)) break;
    bool disjoint = true;
    for (std::size_t k : windows[wi].members)
      if (covered[k]) {
        disjoint = false;
        break;
      }
    if (!disjoint) continue;
    for (std::size_t k : windows[wi].members) covered[k] = 1;
    kept.push_back(wi);
    if (kept.size() >= 1 + max_secondaries) break;
  }
  return kept;
}

BaselineScanResult assemble_result(BaselineMethod method,
                                   const std::vector<double>& observed_stats,
                                   std::vector<double> null_max,
                                   const std::vector<CandidateWindow>& windows,
                                   std::size_t n_units,
                                   const BaselineOptions& options) {
  const auto kept = rank_clusters(observed_stats, windows, n_units, options.max_secondaries);
  const auto p_of = [&](double stat) {
    std::size_t count = 0;
    for (double s : null_max) count += s >= stat;
    return static_cast<double>(1 + count) / static_cast<double>(null_max.size() + 1);
  };
  BaselineScanResult result;
  result.method = method;
  result.mlc_window = kept.front();
  result.statistic = observed_stats[kept.front()];
  result.p_value = p_of(result.statistic);
  for (std::size_t i = 1; i < kept.size(); ++i)
    result.secondaries.push_back(BaselineSecondary{
        kept[i], observed_stats[kept[i]], p_of(observed_stats[kept[i]])});
  result.window_statistics = observed_stats;
  result.null_statistics = std::move(null_max);
  return result;
}

}  // namespace

BaselineScanResult exponential_scan(const SurvivalDataset& dataset,
                                    const std::vector<CandidateWindow>& windows,
                                    const BaselineOptions& options) {
  if (windows.empty()) throw ValidationError("candidate window set is empty");
  if (dataset.n_events() == 0)
    throw NumericalError("exponential scan needs at least one event");
  const std::size_t n = dataset.n();
  const std::size_t K = dataset.unit_counts().size();

  // One sweep: per-unit event/time totals, then window sums.
  const auto sweep = [&](const std::vector<std::size_t>& holder,
                         std::vector<double>* per_window) {
    std::vector<double> d_unit(K, 0.0), s_unit(K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t u = dataset.unit_of(holder[i]);
      d_unit[u] += dataset.events()[static_cast<Eigen::Index>(i)];
      s_unit[u] += dataset.times()[static_cast<Eigen::Index>(i)];
    }
    // With `holder` as identity this is the observed labelling; a permuted
    // holder re-deals each individual's (time, event) onto units.
    const double d_total = std::accumulate(d_unit.begin(), d_unit.end(), 0.0);
    const double s_total = std::accumulate(s_unit.begin(), s_unit.end(), 0.0);
    const double base = d_total * std::log(d_total / s_total);
    double best = 0.0;
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
      double d_in = 0.0, s_in = 0.0;
      for (std::size_t k : windows[wi].members) {
        d_in += d_unit[k];
        s_in += s_unit[k];
      }
      const double d_out = d_total - d_in;
      const double s_out = s_total - s_in;
      double stat = 0.0;
      if (d_in > 0.0 && d_out > 0.0)
        stat = d_in * std::log(d_in / s_in) + d_out * std::log(d_out / s_out) - base;
      if (per_window != nullptr) (*per_window)[wi] = stat;
      if (stat > best) best = stat;
    }
    return best;
  };

  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), 0u);
  std::vector<double> observed(windows.size(), 0.0);
  sweep(identity, &observed);

  const auto M = static_cast<std::size_t>(options.permutations);
  std::vector<double> null_max(M, 0.0);
  parallel_for(M, options.threads, [&](std::size_t m) {
    Rng rng(options.seed, m);
    std::vector<std::size_t> holder = identity;
    rng.shuffle(holder);
    null_max[m] = sweep(holder, nullptr);
  });

  return assemble_result(BaselineMethod::Exponential, observed, std::move(null_max),
                         windows, K, options);
}

namespace {

// Shared per-sweep machinery for the log-rank statistic. With unit weights
// every risk-set quantity depends only on the slot values and is reused
// across permutations; offsets force a per-sweep rebuild.
struct LogrankTables {
  // per slot (ascending time)
  std::vector<double> cum_g;  // sum_{event u <= t_s} d_u c?  no: d_u / W(u)
  std::vector<double> cum_a;  // sum_{event u <= t_s} d_u c_u / W(u)
  std::vector<double> b_gt;   // sum_{event u > t_s} d_u c_u / W(u)^2
  double b_total = 0.0;
  double d_total = 0.0;
};

LogrankTables build_tables(const SlotValues& slots, const std::vector<double>& weights,
                           const std::vector<std::size_t>& holder, bool weighted) {
  const std::size_t n = slots.time.size();
  // Suffix weighted at-risk sums; n_at[s] individuals with time >= t_s.
  std::vector<double> w_at(n + 1, 0.0);
  for (std::size_t s = n; s-- > 0;) {
    const double w = weighted ? weights[holder[s]] : 1.0;
    w_at[s] = w_at[s + 1] + w;
  }

  LogrankTables tables;
  tables.cum_g.resize(n);
  tables.cum_a.resize(n);
  tables.b_gt.resize(n);

  // Walk ascending over tie groups; event quantities attach at each unique
  // event time with the risk set {t >= t}.
  std::vector<double> g_at(n, 0.0), a_at(n, 0.0), b_at(n, 0.0);
  std::size_t s = 0;
  while (s < n) {
    std::size_t e = s;
    double d = 0.0;
    while (e < n && slots.time[e] == slots.time[s]) {
      d += slots.event[e];
      ++e;
    }
    if (d > 0.0) {
      const double W = w_at[s];
      const double n_at = static_cast<double>(n - s);
      const double c = n_at > 1.0 ? (n_at - d) / (n_at - 1.0) : 0.0;
      const double g = d / W;
      const double a = d * c / W;
      const double b = d * c / (W * W);
      for (std::size_t i = s; i < e; ++i) {
        g_at[i] = g / static_cast<double>(e - s);
        a_at[i] = a / static_cast<double>(e - s);
        b_at[i] = b / static_cast<double>(e - s);
      }
      tables.d_total += d;
    }
    s = e;
  }
  // Prefix sums give per-slot lookups; ties share the group totals, so they
  // are spread above and re-aggregated at group boundaries here.
  double run_g = 0.0, run_a = 0.0;
  s = 0;
  while (s < n) {
    std::size_t e = s;
    double g = 0.0, a = 0.0;
    while (e < n && slots.time[e] == slots.time[s]) {
      g += g_at[e];
      a += a_at[e];
      ++e;
    }
    run_g += g;
    run_a += a;
    for (std::size_t i = s; i < e; ++i) {
      tables.cum_g[i] = run_g;
      tables.cum_a[i] = run_a;
    }
    s = e;
  }
  double run_b = 0.0;
  std::size_t idx = n;
  while (idx > 0) {
    std::size_t e = idx;  // exclusive end of the tie group
    std::size_t b = idx;
    while (b > 0 && slots.time[b - 1] == slots.time[e - 1]) --b;
    for (std::size_t i = b; i < e; ++i) tables.b_gt[i] = run_b;
    for (std::size_t i = b; i < e; ++i) run_b += b_at[i];
    idx = b;
  }
  tables.b_total = run_b;
  return tables;
}

}  // namespace

BaselineScanResult logrank_scan(const SurvivalDataset& dataset,
                                const std::vector<CandidateWindow>& windows,
                                const BaselineOptions& options) {
  if (windows.empty()) throw ValidationError("candidate window set is empty");
  if (dataset.n_events() == 0)
    throw NumericalError("log-rank scan needs at least one event");
  const std::size_t n = dataset.n();
  const std::size_t K = dataset.unit_counts().size();
  const SlotValues slots = make_slots(dataset);

  const bool weighted = options.offsets.has_value();
  std::vector<double> weights(n, 1.0);
  if (weighted) {
    if (options.offsets->size() != static_cast<Eigen::Index>(n))
      throw ValidationError("offsets length does not match dataset");
    for (std::size_t i = 0; i < n; ++i)
      weights[i] = std::exp((*options.offsets)[static_cast<Eigen::Index>(i)]);
  }

  std::vector<std::size_t> identity(n);
  std::iota(identity.begin(), identity.end(), 0u);
  const LogrankTables shared = build_tables(slots, weights, identity, false);

  const auto sweep = [&](const std::vector<std::size_t>& holder,
                         std::vector<double>* per_window) {
    const LogrankTables local =
        weighted ? build_tables(slots, weights, holder, true) : LogrankTables{};
    const LogrankTables& tables = weighted ? local : shared;

    // Per-unit aggregates and per-unit slot lists (descending time).
    std::vector<double> o_unit(K, 0.0), e_unit(K, 0.0), a_unit(K, 0.0), w_sum(K, 0.0);
    std::vector<std::vector<std::size_t>> unit_slots(K);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t i = holder[s];
      const std::size_t u = dataset.unit_of(i);
      const double w = weighted ? weights[i] : 1.0;
      o_unit[u] += slots.event[s];
      e_unit[u] += w * tables.cum_g[s];
      a_unit[u] += w * tables.cum_a[s];
      w_sum[u] += w;
    }
    for (std::size_t s = n; s-- > 0;)
      unit_slots[dataset.unit_of(holder[s])].push_back(s);

    std::vector<std::size_t> buffer;
    double best = 0.0;
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
      double O = 0.0, E = 0.0, V1 = 0.0;
      buffer.clear();
      for (std::size_t k : windows[wi].members) {
        O += o_unit[k];
        E += e_unit[k];
        V1 += a_unit[k];
        buffer.insert(buffer.end(), unit_slots[k].begin(), unit_slots[k].end());
      }
      double stat = 0.0;
      if (O > 0.0 && O < tables.d_total) {
        // Segment walk for sum_t b_t W_in(t)^2: W_in is a step function in
        // the window's own slot times.
        std::sort(buffer.begin(), buffer.end(), std::greater<>());
        double v2 = 0.0;
        double w_in = 0.0;
        for (std::size_t i = 0; i < buffer.size(); ++i) {
          const std::size_t s_cur = buffer[i];
          w_in += weighted ? weights[holder[s_cur]] : 1.0;
          const double hi = tables.b_gt[s_cur];
          const double lo = (i + 1 < buffer.size()) ? tables.b_gt[buffer[i + 1]]
                                                    : tables.b_total;
          if (lo > hi) v2 += w_in * w_in * (lo - hi);
        }
        const double V = V1 - v2;
        if (V > 0.0) {
          const double u = O - E;
          stat = u * u / V;
        }
      }
      if (per_window != nullptr) (*per_window)[wi] = stat;
      if (stat > best) best = stat;
    }
    return best;
  };

  std::vector<double> observed(windows.size(), 0.0);
  sweep(identity, &observed);

  const auto M = static_cast<std::size_t>(options.permutations);
  std::vector<double> null_max(M, 0.0);
  parallel_for(M, options.threads, [&](std::size_t m) {
    Rng rng(options.seed, m);
    std::vector<std::size_t> holder = identity;
    rng.shuffle(holder);
    null_max[m] = sweep(holder, nullptr);
  });

  return assemble_result(BaselineMethod::Logrank, observed, std::move(null_max), windows,
                         K, options);
}

ExponentialRegression fit_exponential_regression(const SurvivalDataset& dataset) {
  const auto n = static_cast<Eigen::Index>(dataset.n());
  const auto p = static_cast<Eigen::Index>(dataset.n_covariates());
  Eigen::MatrixXd X(n, p + 1);
  X.col(0).setOnes();
  if (p > 0) X.rightCols(p) = dataset.covariates();
  Eigen::VectorXd delta = dataset.events().cast<double>();
  const Eigen::VectorXd& t = dataset.times();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  const double d_total = delta.sum();
  if (d_total == 0.0) throw NumericalError("exponential regression needs events");
  beta[0] = std::log(d_total / t.sum());

  const auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = X * b;
    return (delta.array() * eta.array() - t.array() * eta.array().exp()).sum();
  };
  double f = loglik(beta);
  Eigen::MatrixXd H(p + 1, p + 1);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = X * beta;
    const Eigen::VectorXd mu = t.array() * eta.array().exp();
    const Eigen::VectorXd grad = X.transpose() * (delta - mu);
    H = X.transpose() * mu.asDiagonal() * X;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-10) break;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success)
      throw NumericalError("exponential regression Hessian is singular");
    const Eigen::VectorXd step = llt.solve(grad);
    double s = 1.0;
    double f_new = 0.0;
    while (s >= 1e-12) {
      f_new = loglik(beta + s * step);
      if (std::isfinite(f_new) && f_new > f - 1e-12) break;
      s *= 0.5;
    }
    if (s < 1e-12) throw NumericalError("exponential regression did not converge");
    beta += s * step;
    f = f_new;
    if (iter == 99) throw NumericalError("exponential regression did not converge");
  }
  ExponentialRegression fit;
  fit.intercept = beta[0];
  fit.beta = beta.tail(p);
  fit.covariance = H.inverse();
  return fit;
}

CoxModel fit_cox(const Eigen::VectorXd& times, const Eigen::VectorXi& events,
                 const Eigen::MatrixXd& covariates, int max_iterations) {
  const Eigen::Index n = times.size();
  const Eigen::Index p = covariates.cols();
  if (p == 0) throw ValidationError("Cox model needs at least one covariate");
  if (events.sum() == 0) throw NumericalError("Cox model needs events");

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ta = times[static_cast<Eigen::Index>(a)];
    const double tb = times[static_cast<Eigen::Index>(b)];
    if (ta != tb) return ta > tb;  // descending: suffix accumulation
    return a < b;
  });

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd H_final(p, p);

  const auto pass = [&](const Eigen::VectorXd& b, double* f, Eigen::VectorXd* grad,
                        Eigen::MatrixXd* hess) {
    const Eigen::VectorXd eta = covariates * b;
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    double ll = 0.0;
    if (grad != nullptr) grad->setZero();
    if (hess != nullptr) hess->setZero();
    std::size_t i = 0;
    const std::size_t N = order.size();
    while (i < N) {
      const double t = times[static_cast<Eigen::Index>(order[i])];
      std::size_t j = i;
      // Breslow: the whole tie group enters the risk set first.
      while (j < N && times[static_cast<Eigen::Index>(order[j])] == t) {
        const auto idx = static_cast<Eigen::Index>(order[j]);
        const double w = std::exp(eta[idx]);
        s0 += w;
        if (grad != nullptr) s1 += w * covariates.row(idx).transpose();
        if (hess != nullptr)
          s2.selfadjointView<Eigen::Upper>().rankUpdate(
              covariates.row(idx).transpose(), w);
        ++j;
      }
      for (std::size_t k = i; k < j; ++k) {
        const auto idx = static_cast<Eigen::Index>(order[k]);
        if (events[idx] != 1) continue;
        ll += eta[idx] - std::log(s0);
        if (grad != nullptr)
          *grad += covariates.row(idx).transpose() - s1 / s0;
        if (hess != nullptr) {
          const Eigen::MatrixXd s2s = Eigen::MatrixXd(s2.selfadjointView<Eigen::Upper>());
          *hess += s2s / s0 - (s1 / s0) * (s1 / s0).transpose();
        }
      }
      i = j;
    }
    if (f != nullptr) *f = ll;
  };

  double f = 0.0;
  Eigen::VectorXd grad(p);
  Eigen::MatrixXd hess(p, p);
  pass(beta, &f, nullptr, nullptr);
  for (int iter = 0; iter < max_iterations; ++iter) {
    pass(beta, nullptr, &grad, &hess);
    H_final = hess;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9) break;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() != Eigen::Success) {
      hess.diagonal().array() += 1e-10;
      llt.compute(hess);
      if (llt.info() != Eigen::Success)
        throw NumericalError("Cox Hessian is singular (collinear covariates?)");
    }
    const Eigen::VectorXd step = llt.solve(grad);
    double s = 1.0;
    double f_new = 0.0;
    while (s >= 1e-12) {
      pass(beta + s * step, &f_new, nullptr, nullptr);
      if (std::isfinite(f_new) && f_new > f - 1e-12) break;
      s *= 0.5;
    }
    if (s < 1e-12) throw NumericalError("Cox fit did not converge");
    beta += s * step;
    f = f_new;
    if (iter == max_iterations - 1)
      throw NumericalError("Cox fit did not converge");
  }
  CoxModel model;
  model.beta = beta;
  model.covariance = H_final.inverse();
  model.log_likelihood = f;
  return model;
}

CovariateAdjustment adjust_covariates(const SurvivalDataset& dataset,
                                      const StudyRegion& region, BaselineMethod method) {
  if (dataset.n_covariates() == 0)
    throw ValidationError("covariate adjustment needs at least one covariate");
  CovariateAdjustment adjustment;
  adjustment.method = method;
  if (method == BaselineMethod::Exponential) {
    const auto fit = fit_exponential_regression(dataset);
    adjustment.beta = fit.beta;
    const Eigen::VectorXd scale = (dataset.covariates() * fit.beta).array().exp();
    Eigen::VectorXd new_times = dataset.times().cwiseProduct(scale);
    adjustment.adjusted =
        SurvivalDataset(region, dataset.units(), std::move(new_times),
                        dataset.events(), Eigen::MatrixXd());
  } else {
    const auto fit = fit_cox(dataset.times(), dataset.events(), dataset.covariates());
    adjustment.beta = fit.beta;
    adjustment.offsets = dataset.covariates() * fit.beta;
  }
  return adjustment;
}

double cluster_hazard_ratio(const SurvivalDataset& dataset,
                            const std::vector<std::size_t>& cluster_units) {
  const auto n = static_cast<Eigen::Index>(dataset.n());
  const auto p = static_cast<Eigen::Index>(dataset.n_covariates());
  std::vector<char> in_cluster(dataset.unit_counts().size(), 0);
  for (std::size_t k : cluster_units) in_cluster[k] = 1;
  Eigen::MatrixXd Z(n, p + 1);
  if (p > 0) Z.leftCols(p) = dataset.covariates();
  for (Eigen::Index i = 0; i < n; ++i)
    Z(i, p) = in_cluster[dataset.unit_of(static_cast<std::size_t>(i))] ? 1.0 : 0.0;
  const auto fit = fit_cox(dataset.times(), dataset.events(), Z);
  return std::exp(fit.beta[p]);
}

}  // namespace frailtyscan
