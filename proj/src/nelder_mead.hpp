#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <vector>

namespace frailtyscan::detail {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int evaluations = 0;
};

// Maximizes f over a box by the standard simplex moves. Vertices are clamped
// into the box, which can park the optimum on a face (wanted for the
// correlation bound). Deterministic.
inline NelderMeadResult nelder_mead_maximize(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& start,
    const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double simplex_step,
    int max_evaluations, double f_tol, double x_tol) {
  const int n = static_cast<int>(start.size());
  int evals = 0;
  const auto clamp = [&](Eigen::VectorXd v) {
    for (int i = 0; i < n; ++i) v[i] = std::min(hi[i], std::max(lo[i], v[i]));
    return v;
  };
  const auto eval = [&](const Eigen::VectorXd& v) {
    ++evals;
    return f(v);
  };

  std::vector<Eigen::VectorXd> xs(n + 1);
  std::vector<double> fs(n + 1);
  xs[0] = clamp(start);
  fs[0] = eval(xs[0]);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v = xs[0];
    v[i] += (v[i] + simplex_step <= hi[i]) ? simplex_step : -simplex_step;
    xs[i + 1] = clamp(v);
    fs[i + 1] = eval(xs[i + 1]);
  }

  Eigen::VectorXd best_x = xs[0];
  double best_f = fs[0];
  const auto note_best = [&](const Eigen::VectorXd& x, double v) {
    if (v > best_f) {
      best_f = v;
      best_x = x;
    }
  };
  for (int i = 0; i <= n; ++i) note_best(xs[i], fs[i]);

  std::vector<int> order(n + 1);
  while (evals < max_evaluations) {
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] > fs[b]; });
    const int ib = order[0], iw = order[n], is = order[n - 1];

    double spread = fs[ib] - fs[iw];
    double diam = 0.0;
    for (int i = 1; i <= n; ++i)
      diam = std::max(diam, (xs[order[i]] - xs[ib]).cwiseAbs().maxCoeff());
    if (spread < f_tol && diam < x_tol) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[order[i]];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = clamp(centroid + (centroid - xs[iw]));
    const double fr = eval(reflected);
    note_best(reflected, fr);
    if (fr > fs[ib]) {
      const Eigen::VectorXd expanded = clamp(centroid + 2.0 * (centroid - xs[iw]));
      const double fe = eval(expanded);
      note_best(expanded, fe);
      if (fe > fr) {
        xs[iw] = expanded;
        fs[iw] = fe;
      } else {
        xs[iw] = reflected;
        fs[iw] = fr;
      }
      continue;
    }
    if (fr > fs[is]) {
      xs[iw] = reflected;
      fs[iw] = fr;
      continue;
    }
    const Eigen::VectorXd contracted = clamp(centroid + 0.5 * (xs[iw] - centroid));
    const double fc = eval(contracted);
    note_best(contracted, fc);
    if (fc > fs[iw]) {
      xs[iw] = contracted;
      fs[iw] = fc;
      continue;
    }
    for (int i = 1; i <= n; ++i) {
      const int idx = order[i];
      xs[idx] = clamp(xs[order[0]] + 0.5 * (xs[idx] - xs[order[0]]));
      fs[idx] = eval(xs[idx]);
      note_best(xs[idx], fs[idx]);
      if (evals >= max_evaluations) break;
    }
  }
  return NelderMeadResult{best_x, best_f, evals};
}

}  // namespace frailtyscan::detail
