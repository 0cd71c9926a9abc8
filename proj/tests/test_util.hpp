#pragma once

// Test-side helpers kept independent of the library's numerics: a plain
// amoeba maximizer with coordinate polish, and a KS statistic.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

// Downhill simplex (maximization) without constraints.
inline Eigen::VectorXd amoeba_max(const std::function<double(const Eigen::VectorXd&)>& f,
                                  Eigen::VectorXd x0, double step, int iterations) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 0; i < n; ++i) xs[i + 1][i] += step;
  for (int i = 0; i <= n; ++i) fs[i] = f(xs[i]);
  for (int it = 0; it < iterations; ++it) {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] > fs[b]; });
    const int ib = idx[0], is = idx[n - 1], iw = idx[n];
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[idx[i]];
    centroid /= n;
    const Eigen::VectorXd xr = centroid + (centroid - xs[iw]);
    const double fr = f(xr);
    if (fr > fs[ib]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[iw]);
      const double fe = f(xe);
      if (fe > fr) {
        xs[iw] = xe;
        fs[iw] = fe;
      } else {
        xs[iw] = xr;
        fs[iw] = fr;
      }
      continue;
    }
    if (fr > fs[is]) {
      xs[iw] = xr;
      fs[iw] = fr;
      continue;
    }
    const Eigen::VectorXd xc = centroid + 0.5 * (xs[iw] - centroid);
    const double fc = f(xc);
    if (fc > fs[iw]) {
      xs[iw] = xc;
      fs[iw] = fc;
      continue;
    }
    for (int i = 1; i <= n; ++i) {
      xs[idx[i]] = xs[ib] + 0.5 * (xs[idx[i]] - xs[ib]);
      fs[idx[i]] = f(xs[idx[i]]);
    }
  }
  int ib = 0;
  for (int i = 1; i <= n; ++i)
    if (fs[i] > fs[ib]) ib = i;
  return xs[ib];
}

// Golden-section polish along each coordinate, repeated. Coordinate descent
// converges linearly, so correlated objectives need a few dozen sweeps.
inline Eigen::VectorXd coordinate_polish(
    const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
    double radius, int sweeps) {
  const double gr = 0.6180339887498949;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int i = 0; i < x.size(); ++i) {
      double a = x[i] - radius, b = x[i] + radius;
      double c = b - gr * (b - a), d = a + gr * (b - a);
      Eigen::VectorXd xc = x, xd = x;
      xc[i] = c;
      xd[i] = d;
      double fc = f(xc), fd = f(xd);
      for (int it = 0; it < 90; ++it) {
        if (fc > fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - gr * (b - a);
          xc[i] = c;
          fc = f(xc);
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + gr * (b - a);
          xd[i] = d;
          fd = f(xd);
        }
      }
      x[i] = 0.5 * (a + b);
    }
    radius = std::max(radius * 0.5, 1e-6);
  }
  return x;
}

// Newton polish on central finite differences; quadratic convergence near a
// smooth maximum while using only function evaluations.
inline Eigen::VectorXd fd_newton_max(const std::function<double(const Eigen::VectorXd&)>& f,
                                     Eigen::VectorXd x, int steps) {
  const int n = static_cast<int>(x.size());
  const double h = 1e-4;
  for (int step = 0; step < steps; ++step) {
    Eigen::VectorXd grad(n);
    Eigen::MatrixXd hess(n, n);
    const double f0 = f(x);
    std::vector<double> fp(n), fm(n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fp[i] = f(xp);
      fm[i] = f(xm);
      grad[i] = (fp[i] - fm[i]) / (2 * h);
      hess(i, i) = (fp[i] - 2 * f0 + fm[i]) / (h * h);
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
        xpp[i] += h; xpp[j] += h;
        xpm[i] += h; xpm[j] -= h;
        xmp[i] -= h; xmp[j] += h;
        xmm[i] -= h; xmm[j] -= h;
        hess(i, j) = hess(j, i) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4 * h * h);
      }
    const Eigen::VectorXd delta = (-hess).ldlt().solve(grad);
    if (!delta.allFinite()) break;
    if (delta.lpNorm<Eigen::Infinity>() < 1e-10) break;
    if (f(x + delta) >= f0) {
      x += delta;
    } else if (f(x + 0.25 * delta) >= f0) {
      x += 0.25 * delta;
    } else {
      break;
    }
  }
  return x;
}

// Two-sided KS statistic of samples against a CDF.
inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double F = cdf(samples[i]);
    d = std::max(d, std::abs(F - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - F));
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) ++i;
    else ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() -
                             static_cast<double>(j) / b.size()));
  }
  return d;
}

inline double normal_cdf(double x, double mu, double sd) {
  return 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0)));
}

}  // namespace testutil
