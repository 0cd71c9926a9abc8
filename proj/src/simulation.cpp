#include "frailtyscan/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "frailtyscan/baselines.hpp"
#include "frailtyscan/errors.hpp"
#include "frailtyscan/frailty.hpp"
#include "frailtyscan/inference.hpp"
#include "frailtyscan/parallel.hpp"
#include "frailtyscan/rng.hpp"
#include "frailtyscan/scan.hpp"

namespace frailtyscan {

namespace {

std::string padded_id(std::size_t index) {
  std::string digits = std::to_string(index + 1);
  while (digits.size() < 3) digits.insert(digits.begin(), '0');
  return "u" + digits;
}

// Largest-remainder split of `total` individuals over the given units,
// earlier units taking the extras.
std::vector<std::size_t> even_split(std::size_t total, std::size_t n_units) {
  std::vector<std::size_t> counts(n_units, total / n_units);
  const std::size_t extra = total - counts.front() * n_units;
  for (std::size_t i = 0; i < extra; ++i) ++counts[i];
  return counts;
}

}  // namespace

StudyRegion make_lattice_region(std::size_t rows, std::size_t cols,
                                std::size_t n_units) {
  std::vector<Unit> units;
  std::vector<std::pair<std::string, std::string>> edges;
  units.reserve(n_units);
  const auto index_of = [&](std::size_t r, std::size_t c) { return r * cols + c; };
  for (std::size_t r = 0; r < rows && units.size() < n_units; ++r)
    for (std::size_t c = 0; c < cols && units.size() < n_units; ++c)
      units.push_back(Unit{padded_id(index_of(r, c)), static_cast<double>(c),
                           static_cast<double>(r)});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = index_of(r, c);
      if (i >= n_units) continue;
      if (c + 1 < cols && index_of(r, c + 1) < n_units)
        edges.emplace_back(padded_id(i), padded_id(index_of(r, c + 1)));
      if (r + 1 < rows && index_of(r + 1, c) < n_units)
        edges.emplace_back(padded_id(i), padded_id(index_of(r + 1, c)));
    }
  return StudyRegion(std::move(units), edges);
}

BuiltinMap builtin_map169() {
  BuiltinMap map{make_lattice_region(13, 13, 169), {}, {}};
  // Compact disc of 13 units around the lattice center plus one attached
  // neighbour, mirroring the paper's 14-unit contiguous cluster.
  const int cx = 6, cy = 6;
  std::vector<std::pair<int, int>> offsets = {
      {0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1},
      {-1, 1}, {-1, -1}, {2, 0}, {-2, 0}, {0, 2}, {0, -2}, {1, 2}};
  for (const auto& [dx, dy] : offsets)
    map.cluster_units.push_back(static_cast<std::size_t>((cy + dy) * 13 + (cx + dx)));
  std::sort(map.cluster_units.begin(), map.cluster_units.end());

  map.unit_counts.assign(169, 0);
  const auto cluster_counts = even_split(135, map.cluster_units.size());
  for (std::size_t i = 0; i < map.cluster_units.size(); ++i)
    map.unit_counts[map.cluster_units[i]] = cluster_counts[i];
  std::vector<std::size_t> rest;
  for (std::size_t k = 0; k < 169; ++k)
    if (map.unit_counts[k] == 0) rest.push_back(k);
  const auto rest_counts = even_split(1690 - 135, rest.size());
  for (std::size_t i = 0; i < rest.size(); ++i) map.unit_counts[rest[i]] = rest_counts[i];
  return map;
}

BuiltinMap builtin_map94() {
  BuiltinMap map{make_lattice_region(10, 10, 94), {}, {}};
  // Center plus its ring less one diagonal: a compact 8-unit blob that a
  // circular window covers almost exactly.
  const int cr = 4, cc = 5;
  const std::vector<std::pair<int, int>> offsets = {
      {0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}};
  for (const auto& [dr, dc] : offsets)
    map.cluster_units.push_back(static_cast<std::size_t>((cr + dr) * 10 + (cc + dc)));
  std::sort(map.cluster_units.begin(), map.cluster_units.end());

  map.unit_counts.assign(94, 0);
  const auto cluster_counts = even_split(73, map.cluster_units.size());
  for (std::size_t i = 0; i < map.cluster_units.size(); ++i)
    map.unit_counts[map.cluster_units[i]] = cluster_counts[i];
  std::vector<std::size_t> rest;
  for (std::size_t k = 0; k < 94; ++k)
    if (map.unit_counts[k] == 0) rest.push_back(k);
  const auto rest_counts = even_split(940 - 73, rest.size());
  for (std::size_t i = 0; i < rest.size(); ++i) map.unit_counts[rest[i]] = rest_counts[i];
  return map;
}

Eigen::VectorXd generate_frailty_field(const StudyRegion& region,
                                       const std::vector<std::size_t>& cluster_units,
                                       double alpha, double rho, double sigma2,
                                       std::uint64_t seed) {
  const auto nm = build_neighbor_matrix(region);
  const auto precision = leroux_precision(nm, rho, sigma2);
  Eigen::LLT<Eigen::MatrixXd> llt(precision.A);
  if (llt.info() != Eigen::Success)
    throw NumericalError("precision matrix is not positive definite");
  const auto K = static_cast<Eigen::Index>(region.size());
  Rng rng(seed);
  Eigen::VectorXd z(K);
  for (Eigen::Index i = 0; i < K; ++i) z[i] = rng.normal();
  llt.matrixU().solveInPlace(z);
  Eigen::VectorXd phi = std::sqrt(sigma2) * z;
  for (std::size_t k : cluster_units) phi[static_cast<Eigen::Index>(k)] += alpha;
  return phi;
}

SurvivalDataset generate_survival_times(const StudyRegion& region,
                                        const Eigen::VectorXd& field,
                                        const std::vector<std::size_t>& unit_counts,
                                        std::uint64_t seed) {
  if (unit_counts.size() != region.size())
    throw ValidationError("unit_counts length does not match region size");
  std::size_t n = 0;
  for (std::size_t c : unit_counts) n += c;
  std::vector<std::size_t> unit;
  unit.reserve(n);
  Eigen::VectorXd time(static_cast<Eigen::Index>(n));
  Eigen::VectorXi event = Eigen::VectorXi::Ones(static_cast<Eigen::Index>(n));
  Rng rng(seed);
  Eigen::Index i = 0;
  for (std::size_t k = 0; k < unit_counts.size(); ++k) {
    const double inv_hazard = std::exp(-field[static_cast<Eigen::Index>(k)]);
    for (std::size_t j = 0; j < unit_counts[k]; ++j) {
      unit.push_back(k);
      time[i++] = -2.0 * std::log(1.0 - rng.uniform()) * inv_hazard;
    }
  }
  return SurvivalDataset(region, std::move(unit), std::move(time), std::move(event),
                         Eigen::MatrixXd());
}

SurvivalDataset apply_administrative_censoring(const StudyRegion& region,
                                               const SurvivalDataset& dataset,
                                               double target_proportion) {
  if (!(target_proportion >= 0.0 && target_proportion < 1.0))
    throw ValidationError("censoring target must lie in [0, 1)");
  if (target_proportion == 0.0) return dataset;
  const auto n = static_cast<Eigen::Index>(dataset.n());
  std::vector<double> sorted(dataset.times().data(), dataset.times().data() + n);
  std::sort(sorted.begin(), sorted.end());
  const auto m = static_cast<std::size_t>(std::max(
      1.0, std::ceil((1.0 - target_proportion) * static_cast<double>(n))));
  const double end_of_study = sorted[std::min<std::size_t>(m, sorted.size()) - 1];

  Eigen::VectorXd time = dataset.times();
  Eigen::VectorXi event = dataset.events();
  for (Eigen::Index i = 0; i < n; ++i)
    if (time[i] > end_of_study) {
      time[i] = end_of_study;
      event[i] = 0;
    }
  return SurvivalDataset(region, dataset.units(), std::move(time), std::move(event),
                         dataset.covariates());
}

std::string method_name(ExperimentMethod method) {
  switch (method) {
    case ExperimentMethod::Car: return "car";
    case ExperimentMethod::Iid: return "iid";
    case ExperimentMethod::Icar: return "icar";
    case ExperimentMethod::Exponential: return "exponential";
    case ExperimentMethod::Logrank: return "logrank";
  }
  return "car";
}

std::optional<ExperimentMethod> method_from_name(const std::string& name) {
  if (name == "car") return ExperimentMethod::Car;
  if (name == "iid") return ExperimentMethod::Iid;
  if (name == "icar") return ExperimentMethod::Icar;
  if (name == "exponential") return ExperimentMethod::Exponential;
  if (name == "logrank") return ExperimentMethod::Logrank;
  return std::nullopt;
}

namespace {

BuiltinMap resolve_map(const SimulationConfig& config) {
  if (config.region_name == "map169") return builtin_map169();
  if (config.region_name == "map94") return builtin_map94();
  if (config.region_name == "custom") {
    if (!config.units_path || !config.adjacency_path)
      throw ValidationError("custom region needs units_path and adjacency_path");
    BuiltinMap map{StudyRegion::from_files(*config.units_path, *config.adjacency_path),
                   {},
                   {}};
    if (config.cluster_unit_ids.empty())
      throw ValidationError("custom region needs cluster_unit_ids");
    for (const auto& id : config.cluster_unit_ids)
      map.cluster_units.push_back(map.region.index_of(id));
    std::sort(map.cluster_units.begin(), map.cluster_units.end());
    map.unit_counts.assign(map.region.size(), config.custom_individuals_per_unit);
    return map;
  }
  throw ValidationError("unknown region: " + config.region_name);
}

struct ReplicateOutcome {
  bool failed = false;
  bool rejected = false;
  double tpr = 0.0, fpr = 0.0, ppv = 0.0;
};

struct CellSpec {
  double alpha = 0.0;
  double rho = 0.0;
  double censoring = 0.0;
};

}  // namespace

MetricsReport run_experiment(const SimulationConfig& config, ExperimentMethod method,
                             unsigned threads) {
  if (config.alpha_grid.empty() || config.rho_grid.empty() ||
      config.censoring_targets.empty())
    throw ValidationError("simulation grids must be non-empty");
  if (config.replicates < 1) throw ValidationError("need at least one replicate");
  if (!(config.sigma2 > 0.0)) throw ValidationError("sigma2 must be positive");

  const BuiltinMap map = resolve_map(config);
  const auto windows = enumerate_windows(map.region, map.unit_counts);
  const auto neighbor = build_neighbor_matrix(map.region);

  std::vector<CellSpec> cells;
  for (double censoring : config.censoring_targets)
    for (double rho : config.rho_grid)
      for (double alpha : config.alpha_grid)
        cells.push_back(CellSpec{alpha, rho, censoring});

  const std::size_t n_cluster_individuals = [&] {
    std::size_t c = 0;
    for (std::size_t k : map.cluster_units) c += map.unit_counts[k];
    return c;
  }();
  std::size_t n_total = 0;
  for (std::size_t c : map.unit_counts) n_total += c;
  std::vector<char> in_cluster(map.region.size(), 0);
  for (std::size_t k : map.cluster_units) in_cluster[k] = 1;

  const auto R = static_cast<std::size_t>(config.replicates);
  std::vector<ReplicateOutcome> outcomes(cells.size() * R);

  parallel_for(cells.size() * R, threads, [&](std::size_t job) {
    const std::size_t cell_index = job / R;
    const std::size_t rep = job % R;
    const CellSpec& cell = cells[cell_index];
    ReplicateOutcome& outcome = outcomes[job];
    const std::uint64_t base = job * 4;
    try {
      const Eigen::VectorXd field =
          generate_frailty_field(map.region, map.cluster_units, cell.alpha, cell.rho,
                                 config.sigma2, mix_seed(config.seed, base));
      SurvivalDataset data = generate_survival_times(
          map.region, field, map.unit_counts, mix_seed(config.seed, base + 1));
      if (cell.censoring > 0.0)
        data = apply_administrative_censoring(map.region, data, cell.censoring);

      double p_value = 1.0;
      const std::vector<std::size_t>* detected = nullptr;
      if (method == ExperimentMethod::Exponential ||
          method == ExperimentMethod::Logrank) {
        BaselineOptions opt;
        opt.permutations = config.mc_replicates;
        opt.seed = mix_seed(config.seed, base + 2);
        opt.threads = 1;
        const BaselineScanResult result = method == ExperimentMethod::Exponential
                                              ? exponential_scan(data, windows, opt)
                                              : logrank_scan(data, windows, opt);
        p_value = result.p_value;
        detected = &windows[result.mlc_window].members;
      } else {
        const PiecewiseGrid grid = build_grid(data);
        PriorSpec priors;
        SelectOptions sel;
        sel.bf_threshold = config.bf_threshold;
        sel.threads = 1;
        sel.model = method == ExperimentMethod::Iid    ? FrailtyModel::Iid
                    : method == ExperimentMethod::Icar ? FrailtyModel::Icar
                                                       : FrailtyModel::Car;
        const FrailtySelection selection =
            select_frailties(data, map.region, grid, priors, windows, sel);

        GaussianScanInput input;
        input.phi_star = selection.phi_star;
        input.precision = leroux_precision(
            neighbor, std::min(selection.rho_star, 0.999), 1.0);
        input.windows = windows;
        const detail::ScanContext context(input);
        const ScanResult scanned = context.scan(input.phi_star, ScanOptions{});

        MonteCarloOptions mc;
        mc.replicates = config.mc_replicates;
        mc.seed = mix_seed(config.seed, base + 2);
        mc.threads = 1;
        const SignificanceReport report = monte_carlo_pvalue(context, scanned, mc);
        p_value = report.p_mlc;
        detected = &windows[scanned.mlc.window_index].members;
      }

      outcome.rejected = p_value <= config.level;
      if (outcome.rejected) {
        std::size_t inside_true = 0, inside_total = 0;
        for (std::size_t k : *detected) {
          inside_total += map.unit_counts[k];
          if (in_cluster[k]) inside_true += map.unit_counts[k];
        }
        outcome.tpr = n_cluster_individuals == 0
                          ? 0.0
                          : static_cast<double>(inside_true) /
                                static_cast<double>(n_cluster_individuals);
        outcome.fpr = static_cast<double>(inside_total - inside_true) /
                      static_cast<double>(n_total - n_cluster_individuals);
        outcome.ppv = inside_total == 0 ? 0.0
                                        : static_cast<double>(inside_true) /
                                              static_cast<double>(inside_total);
      }
    } catch (const NumericalError&) {
      outcome.failed = true;
    }
  });

  MetricsReport report;
  report.method = method;
  report.config = config;
  report.cells.reserve(cells.size());
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    MetricsCell out;
    out.alpha = cells[ci].alpha;
    out.rho = cells[ci].rho;
    out.censoring = cells[ci].censoring;
    for (std::size_t rep = 0; rep < R; ++rep) {
      const auto& o = outcomes[ci * R + rep];
      if (o.failed) {
        ++out.failures;
        continue;
      }
      ++out.replicates_run;
      if (o.rejected) {
        ++out.rejections;
        out.tpr += o.tpr;
        out.fpr += o.fpr;
        out.ppv += o.ppv;
      }
    }
    if (out.rejections > 0) {
      out.tpr /= out.rejections;
      out.fpr /= out.rejections;
      out.ppv /= out.rejections;
    }
    out.rejection_rate = out.replicates_run == 0
                             ? 0.0
                             : static_cast<double>(out.rejections) /
                                   static_cast<double>(out.replicates_run);
    report.cells.push_back(out);
  }
  return report;
}

}  // namespace frailtyscan
