// Command-line front end: scan (two-stage frailty method), baseline
// (exponential / log-rank), simulate (experiment grids).

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "frailtyscan/baselines.hpp"
#include "frailtyscan/errors.hpp"
#include "frailtyscan/frailty.hpp"
#include "frailtyscan/inference.hpp"
#include "frailtyscan/parallel.hpp"
#include "frailtyscan/report.hpp"
#include "frailtyscan/rng.hpp"
#include "frailtyscan/scan.hpp"
#include "frailtyscan/simulation.hpp"
#include "frailtyscan/survdata.hpp"

namespace fs = std::filesystem;
using namespace frailtyscan;

namespace {

struct CommonArgs {
  std::string units_path, adjacency_path, individuals_path, out_dir;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
  int mc_replicates = 999;
};

void require_input(const std::string& role, const std::string& path) {
  if (!fs::exists(path))
    throw ValidationError(role + ": cannot open " + path);
}

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ValidationError("out: cannot create directory " + out_dir);
}

std::vector<std::optional<double>> cluster_hazard_ratios(
    const SurvivalDataset& dataset, const std::vector<CandidateWindow>& windows,
    const std::vector<std::size_t>& cluster_window_indices) {
  std::vector<std::optional<double>> out;
  for (std::size_t wi : cluster_window_indices) {
    try {
      out.push_back(cluster_hazard_ratio(dataset, windows[wi].members));
    } catch (const std::exception&) {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

int cmd_scan(const CommonArgs& args, const std::string& model_name, double bf_threshold,
             bool diagnostics, bool null_histogram, const std::string& secondary_rule) {
  const auto t0 = std::chrono::steady_clock::now();
  require_input("units", args.units_path);
  require_input("adjacency", args.adjacency_path);
  require_input("individuals", args.individuals_path);
  ensure_out_dir(args.out_dir);

  FrailtyModel model = FrailtyModel::Car;
  if (model_name == "iid") model = FrailtyModel::Iid;
  else if (model_name == "icar") model = FrailtyModel::Icar;
  else if (model_name != "car") throw ValidationError("model: unknown model " + model_name);

  ScanOptions scan_options;
  if (secondary_rule == "center") scan_options.secondary_rule = SecondaryRule::CenterOutsideMlc;
  else if (secondary_rule != "disjoint")
    throw ValidationError("secondary-rule: unknown rule " + secondary_rule);

  const StudyRegion region = StudyRegion::from_files(args.units_path, args.adjacency_path);
  const SurvivalDataset dataset = ingest_individuals(args.individuals_path, region);
  const auto windows = enumerate_windows(region, dataset.unit_counts());
  if (windows.empty()) throw ValidationError("individuals: no admissible candidate windows");

  PriorSpec priors;
  SelectOptions select;
  select.bf_threshold = bf_threshold;
  select.model = model;
  select.threads = args.threads;
  select.collect_diagnostics = diagnostics;
  const FrailtySelection selection =
      select_frailties(dataset, region, build_grid(dataset), priors, windows, select);

  GaussianScanInput input;
  input.phi_star = selection.phi_star;
  input.precision =
      leroux_precision(build_neighbor_matrix(region), std::min(selection.rho_star, 0.999), 1.0);
  input.windows = windows;
  const detail::ScanContext context(input);
  const ScanResult scanned = context.scan(input.phi_star, scan_options);

  MonteCarloOptions mc;
  mc.replicates = args.mc_replicates;
  mc.seed = mix_seed(args.seed, 1);
  mc.threads = args.threads;
  const SignificanceReport significance = monte_carlo_pvalue(context, scanned, mc);

  std::vector<std::size_t> reported{scanned.mlc.window_index};
  for (const auto& s : scanned.secondaries) reported.push_back(s.window_index);
  const auto hrs = cluster_hazard_ratios(dataset, windows, reported);

  const Json result =
      scan_report_json(region, windows, selection, scanned, significance, hrs, model_name);
  write_text_file((fs::path(args.out_dir) / "result.json").string(), result.dump(2) + "\n");
  write_text_file((fs::path(args.out_dir) / "clusters.geojson").string(),
                  geojson_clusters(region, windows, scanned).dump(2) + "\n");
  if (diagnostics)
    write_text_file((fs::path(args.out_dir) / "diagnostics.json").string(),
                    diagnostics_json(selection).dump(2) + "\n");
  if (null_histogram)
    write_text_file((fs::path(args.out_dir) / "null_lambdas.csv").string(),
                    null_lambdas_csv(significance));

  Json config;
  config["model"] = model_name;
  config["bf_threshold"] = bf_threshold;
  config["mc_replicates"] = args.mc_replicates;
  config["secondary_rule"] = secondary_rule;
  config["threads"] = args.threads;
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const Json manifest = manifest_json("scan", config, args.seed,
                                      {{"units", args.units_path},
                                       {"adjacency", args.adjacency_path},
                                       {"individuals", args.individuals_path}},
                                      wall);
  write_text_file((fs::path(args.out_dir) / "manifest.json").string(),
                  manifest.dump(2) + "\n");
  return 0;
}

int cmd_baseline(const CommonArgs& args, const std::string& method_name, bool no_adjust) {
  const auto t0 = std::chrono::steady_clock::now();
  require_input("units", args.units_path);
  require_input("adjacency", args.adjacency_path);
  require_input("individuals", args.individuals_path);
  ensure_out_dir(args.out_dir);

  BaselineMethod method;
  if (method_name == "exponential") method = BaselineMethod::Exponential;
  else if (method_name == "logrank") method = BaselineMethod::Logrank;
  else throw ValidationError("method: unknown method " + method_name);

  const StudyRegion region = StudyRegion::from_files(args.units_path, args.adjacency_path);
  const SurvivalDataset dataset = ingest_individuals(args.individuals_path, region);
  const auto windows = enumerate_windows(region, dataset.unit_counts());
  if (windows.empty()) throw ValidationError("individuals: no admissible candidate windows");

  BaselineOptions options;
  options.permutations = args.mc_replicates;
  options.seed = mix_seed(args.seed, 2);
  options.threads = args.threads;

  const bool adjust = !no_adjust && dataset.n_covariates() > 0;
  BaselineScanResult result;
  if (method == BaselineMethod::Exponential) {
    if (adjust) {
      const auto adjustment = adjust_covariates(dataset, region, method);
      result = exponential_scan(*adjustment.adjusted, windows, options);
    } else {
      result = exponential_scan(dataset, windows, options);
    }
  } else {
    if (adjust) {
      const auto adjustment = adjust_covariates(dataset, region, method);
      options.offsets = adjustment.offsets;
    }
    result = logrank_scan(dataset, windows, options);
  }

  std::vector<std::size_t> reported{result.mlc_window};
  for (const auto& s : result.secondaries) reported.push_back(s.window_index);
  const auto hrs = cluster_hazard_ratios(dataset, windows, reported);

  write_text_file((fs::path(args.out_dir) / "result.json").string(),
                  baseline_report_json(region, windows, result, hrs).dump(2) + "\n");
  std::vector<std::size_t> secondary_windows;
  for (const auto& s : result.secondaries) secondary_windows.push_back(s.window_index);
  write_text_file((fs::path(args.out_dir) / "clusters.geojson").string(),
                  geojson_clusters(region, windows, result.mlc_window, secondary_windows)
                          .dump(2) +
                      "\n");

  Json config;
  config["method"] = method_name;
  config["permutations"] = args.mc_replicates;
  config["adjusted"] = adjust;
  config["threads"] = args.threads;
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_file((fs::path(args.out_dir) / "manifest.json").string(),
                  manifest_json("baseline", config, args.seed,
                                {{"units", args.units_path},
                                 {"adjacency", args.adjacency_path},
                                 {"individuals", args.individuals_path}},
                                wall)
                          .dump(2) +
                      "\n");
  return 0;
}

std::vector<SimulationConfig> preset_configs(const std::string& study, bool paper_scale,
                                             std::uint64_t seed,
                                             std::vector<ExperimentMethod>& methods) {
  std::vector<SimulationConfig> configs;
  if (study == "figure1") {
    std::vector<double> sigma2_grid;
    if (paper_scale)
      for (int i = 0; i <= 10; ++i) sigma2_grid.push_back(0.001 + 0.01 * i);
    else
      sigma2_grid = {0.001, 0.051, 0.101};
    for (double s2 : sigma2_grid) {
      SimulationConfig c;
      c.region_name = "map169";
      c.alpha_grid = {0.0};
      c.rho_grid = {0.0};
      c.sigma2 = s2;
      c.censoring_targets = {0.0};
      c.replicates = 100;
      c.mc_replicates = paper_scale ? 999 : 199;
      c.seed = seed;
      configs.push_back(c);
    }
    if (methods.empty())
      methods = {ExperimentMethod::Exponential, ExperimentMethod::Logrank};
  } else if (study == "figure3") {
    SimulationConfig c;
    c.region_name = "map169";
    c.alpha_grid = paper_scale ? std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0}
                               : std::vector<double>{0.0, 2.0};
    c.rho_grid = paper_scale ? std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8}
                             : std::vector<double>{0.0, 0.4, 0.8};
    c.sigma2 = 1.0;
    c.censoring_targets = {0.0};
    c.replicates = paper_scale ? 100 : 50;
    c.mc_replicates = paper_scale ? 999 : 199;
    c.seed = seed;
    configs.push_back(c);
    if (methods.empty()) methods = {ExperimentMethod::Car};
  } else if (study == "censoring") {
    SimulationConfig c;
    c.region_name = "map94";
    c.alpha_grid = paper_scale ? std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0}
                               : std::vector<double>{2.0};
    c.rho_grid = paper_scale ? std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8}
                             : std::vector<double>{0.4};
    c.sigma2 = 1.0;
    c.censoring_targets = paper_scale ? std::vector<double>{0.1, 0.2, 0.3, 0.4}
                                      : std::vector<double>{0.1, 0.4};
    c.replicates = paper_scale ? 100 : 50;
    c.mc_replicates = paper_scale ? 999 : 199;
    c.seed = seed;
    configs.push_back(c);
    if (methods.empty()) methods = {ExperimentMethod::Car};
  } else {
    throw ValidationError("study: unknown preset " + study);
  }
  return configs;
}

int cmd_simulate(const std::string& config_path, const std::string& study,
                 const std::vector<std::string>& method_names, const std::string& out_dir,
                 std::uint64_t seed, unsigned threads, bool paper_scale) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_out_dir(out_dir);

  std::vector<ExperimentMethod> methods;
  for (const auto& name : method_names) {
    const auto m = method_from_name(name);
    if (!m) throw ValidationError("method: unknown method " + name);
    methods.push_back(*m);
  }

  std::vector<SimulationConfig> configs;
  if (!config_path.empty()) {
    require_input("config", config_path);
    std::ifstream in(config_path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const std::exception& e) {
      throw ValidationError("config: " + std::string(e.what()));
    }
    configs.push_back(config_from_json(j));
    configs.back().seed = seed;
    if (methods.empty()) methods = {ExperimentMethod::Car};
  } else {
    configs = preset_configs(study, paper_scale, seed, methods);
  }

  std::string csv = metrics_csv_header();
  Json all = Json::array();
  for (const auto method : methods)
    for (const auto& config : configs) {
      const MetricsReport report = run_experiment(config, method, threads);
      csv += metrics_csv_rows(report);
      all.push_back(metrics_json(report));
    }

  write_text_file((fs::path(out_dir) / "metrics.csv").string(), csv);
  write_text_file((fs::path(out_dir) / "metrics.json").string(), all.dump(2) + "\n");

  Json config;
  config["study"] = study.empty() ? Json(nullptr) : Json(study);
  config["config_path"] = config_path.empty() ? Json(nullptr) : Json(config_path);
  config["paper_scale"] = paper_scale;
  Json method_list = Json::array();
  for (const auto m : methods) method_list.push_back(method_name(m));
  config["methods"] = method_list;
  Json config_list = Json::array();
  for (const auto& c : configs) config_list.push_back(config_to_json(c));
  config["runs"] = config_list;
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::vector<ManifestInput> inputs;
  if (!config_path.empty()) inputs.push_back({"config", config_path});
  write_text_file((fs::path(out_dir) / "manifest.json").string(),
                  manifest_json("simulate", config, seed, inputs, wall).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial scan statistics for right-censored survival data with "
               "CAR shared frailties"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string model = "car", method, secondary_rule = "disjoint";
  std::string config_path, study;
  std::vector<std::string> sim_methods;
  double bf_threshold = 30.0;
  bool diagnostics = false, null_histogram = false, no_adjust = false,
       paper_scale = false;

  auto* scan = app.add_subcommand("scan", "two-stage frailty scan");
  scan->add_option("--units", args.units_path)->required();
  scan->add_option("--adjacency", args.adjacency_path)->required();
  scan->add_option("--individuals", args.individuals_path)->required();
  scan->add_option("--out", args.out_dir)->required();
  scan->add_option("--seed", args.seed);
  scan->add_option("--threads", args.threads);
  scan->add_option("--mc-replicates", args.mc_replicates);
  scan->add_option("--bf-threshold", bf_threshold);
  scan->add_option("--model", model)->check(CLI::IsMember({"car", "iid", "icar"}));
  scan->add_option("--secondary-rule", secondary_rule)
      ->check(CLI::IsMember({"disjoint", "center"}));
  scan->add_flag("--diagnostics", diagnostics);
  scan->add_flag("--null-histogram", null_histogram);

  auto* baseline = app.add_subcommand("baseline", "classical scan methods");
  baseline->add_option("--units", args.units_path)->required();
  baseline->add_option("--adjacency", args.adjacency_path)->required();
  baseline->add_option("--individuals", args.individuals_path)->required();
  baseline->add_option("--out", args.out_dir)->required();
  baseline->add_option("--method", method)->required();
  baseline->add_option("--seed", args.seed);
  baseline->add_option("--threads", args.threads);
  baseline->add_option("--mc-replicates", args.mc_replicates);
  baseline->add_flag("--no-adjust", no_adjust);

  auto* simulate = app.add_subcommand("simulate", "experiment grids");
  simulate->add_option("--config", config_path);
  simulate->add_option("--study", study);
  simulate->add_option("--method", sim_methods);
  simulate->add_option("--out", args.out_dir)->required();
  simulate->add_option("--seed", args.seed);
  simulate->add_option("--threads", args.threads);
  simulate->add_flag("--paper-scale", paper_scale);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "E_INPUT args: " << e.what() << "\n";
    return 2;
  }

  try {
    if (scan->parsed())
      return cmd_scan(args, model, bf_threshold, diagnostics, null_histogram,
                      secondary_rule);
    if (baseline->parsed()) return cmd_baseline(args, method, no_adjust);
    if (simulate->parsed()) {
      if (config_path.empty() == study.empty())
        throw ValidationError("config: provide exactly one of --config or --study");
      return cmd_simulate(config_path, study, sim_methods, args.out_dir, args.seed,
                          args.threads, paper_scale);
    }
  } catch (const ValidationError& e) {
    std::cerr << "E_INPUT " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "E_NUMERIC " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "E_NUMERIC " << e.what() << "\n";
    return 3;
  }
  return 0;
}
