#include "frailtyscan/report.hpp"

#include <fstream>
#include <sstream>

#include "frailtyscan/errors.hpp"

namespace frailtyscan {

namespace {

Json window_units_json(const StudyRegion& region, const CandidateWindow& window) {
  Json units = Json::array();
  for (std::size_t k : window.members) units.push_back(region.unit(k).id);
  return units;
}

Json cluster_json(const StudyRegion& region, const std::vector<CandidateWindow>& windows,
                  const WindowScore& score, const std::string& role, double p_value,
                  const std::optional<double>& hazard_ratio) {
  const auto& window = windows[score.window_index];
  Json j;
  j["role"] = role;
  j["center_unit"] = region.unit(window.center).id;
  j["units"] = window_units_json(region, window);
  j["n_units"] = window.members.size();
  j["n_individuals"] = window.n_individuals;
  j["llr"] = score.degenerate ? Json("inf") : Json(score.llr);
  j["degenerate"] = score.degenerate;
  j["alpha_w_hat"] = score.alpha_w_hat;
  j["alpha_wc_hat"] = score.alpha_wc_hat;
  j["direction"] = score.alpha_w_hat > score.alpha_wc_hat ? "higher_risk" : "lower_risk";
  j["p_value"] = p_value;
  if (hazard_ratio) j["hazard_ratio"] = *hazard_ratio;
  return j;
}

}  // namespace

Json scan_report_json(const StudyRegion& region,
                      const std::vector<CandidateWindow>& windows,
                      const FrailtySelection& selection, const ScanResult& scan,
                      const SignificanceReport& significance,
                      const std::vector<std::optional<double>>& hazard_ratios,
                      const std::string& model) {
  Json j;
  j["model"] = model;
  j["lambda"] = scan.lambda;
  j["null_params"] = {{"alpha_hat", scan.alpha_hat},
                      {"sigma2_0_hat", scan.sigma2_0_hat}};
  j["frailty"] = {{"winner", selection.winner == HypothesisKind::Alternative
                                 ? "H1"
                                 : "H0"},
                  {"rho_star", selection.rho_star},
                  {"rho_null_fit", selection.null_fit.hyper.rho},
                  {"max_log_bf",
                   selection.log_bf.empty()
                       ? 0.0
                       : *std::max_element(selection.log_bf.begin(),
                                           selection.log_bf.end())}};
  if (selection.winner_window)
    j["frailty"]["winner_window_center"] =
        region.unit(windows[*selection.winner_window].center).id;
  if (selection.alpha_hat_wstar) j["frailty"]["alpha_hat_wstar"] = *selection.alpha_hat_wstar;

  Json clusters = Json::array();
  clusters.push_back(cluster_json(region, windows, scan.mlc, "mlc", significance.p_mlc,
                                  hazard_ratios.empty() ? std::nullopt
                                                        : hazard_ratios.front()));
  for (std::size_t i = 0; i < scan.secondaries.size(); ++i) {
    const double p = i < significance.p_secondaries.size()
                         ? significance.p_secondaries[i]
                         : 1.0;
    clusters.push_back(cluster_json(region, windows, scan.secondaries[i],
                                    "secondary-" + std::to_string(i + 1), p,
                                    i + 1 < hazard_ratios.size() ? hazard_ratios[i + 1]
                                                                 : std::nullopt));
  }
  j["clusters"] = clusters;
  j["mc_replicates"] = significance.null_lambdas.size();
  return j;
}

Json baseline_report_json(const StudyRegion& region,
                          const std::vector<CandidateWindow>& windows,
                          const BaselineScanResult& result,
                          const std::vector<std::optional<double>>& hazard_ratios) {
  Json j;
  j["method"] =
      result.method == BaselineMethod::Exponential ? "exponential" : "logrank";
  Json clusters = Json::array();
  const auto emit = [&](std::size_t wi, double stat, double p, const std::string& role,
                        const std::optional<double>& hr) {
    const auto& window = windows[wi];
    Json c;
    c["role"] = role;
    c["center_unit"] = region.unit(window.center).id;
    c["units"] = window_units_json(region, window);
    c["n_units"] = window.members.size();
    c["n_individuals"] = window.n_individuals;
    c["statistic"] = stat;
    c["p_value"] = p;
    if (hr) c["hazard_ratio"] = *hr;
    clusters.push_back(c);
  };
  emit(result.mlc_window, result.statistic, result.p_value, "mlc",
       hazard_ratios.empty() ? std::nullopt : hazard_ratios.front());
  for (std::size_t i = 0; i < result.secondaries.size(); ++i)
    emit(result.secondaries[i].window_index, result.secondaries[i].statistic,
         result.secondaries[i].p_value, "secondary-" + std::to_string(i + 1),
         i + 1 < hazard_ratios.size() ? hazard_ratios[i + 1] : std::nullopt);
  j["clusters"] = clusters;
  j["statistic"] = result.statistic;
  j["p_value"] = result.p_value;
  j["permutations"] = result.null_statistics.size();
  return j;
}

Json geojson_clusters(const StudyRegion& region,
                      const std::vector<CandidateWindow>& windows,
                      std::size_t mlc_window,
                      const std::vector<std::size_t>& secondary_windows) {
  std::vector<std::string> role(region.size(), "none");
  for (std::size_t i = 0; i < secondary_windows.size(); ++i)
    for (std::size_t k : windows[secondary_windows[i]].members)
      role[k] = "secondary-" + std::to_string(i + 1);
  for (std::size_t k : windows[mlc_window].members) role[k] = "mlc";

  Json features = Json::array();
  for (std::size_t k = 0; k < region.size(); ++k) {
    const Unit& unit = region.unit(k);
    Json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {unit.x, unit.y}}};
    f["properties"] = {{"unit_id", unit.id}, {"cluster", role[k]}};
    features.push_back(f);
  }
  Json j;
  j["type"] = "FeatureCollection";
  j["features"] = features;
  return j;
}

Json geojson_clusters(const StudyRegion& region,
                      const std::vector<CandidateWindow>& windows,
                      const ScanResult& scan) {
  std::vector<std::size_t> secondaries;
  for (const auto& s : scan.secondaries) secondaries.push_back(s.window_index);
  return geojson_clusters(region, windows, scan.mlc.window_index, secondaries);
}

Json diagnostics_json(const FrailtySelection& selection) {
  Json j;
  j["null_fit"] = {{"rho", selection.null_fit.hyper.rho},
                   {"sigma2", selection.null_fit.hyper.sigma2},
                   {"tau", selection.null_fit.hyper.tau},
                   {"log_marginal", selection.null_fit.log_marginal},
                   {"newton_iterations", selection.null_fit.newton_iterations},
                   {"outer_evaluations", selection.null_fit.outer_evaluations}};
  Json windows = Json::array();
  for (const auto& d : selection.diagnostics) {
    windows.push_back({{"window", d.window_index},
                       {"log_bf", d.log_bf},
                       {"rho", d.hyper.rho},
                       {"sigma2", d.hyper.sigma2},
                       {"tau", d.hyper.tau},
                       {"log_marginal", d.log_marginal},
                       {"newton_iterations", d.newton_iterations},
                       {"outer_evaluations", d.outer_evaluations}});
  }
  j["windows"] = windows;
  return j;
}

Json metrics_json(const MetricsReport& report) {
  Json j;
  j["method"] = method_name(report.method);
  j["config"] = config_to_json(report.config);
  Json cells = Json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"alpha", c.alpha},
                     {"rho", c.rho},
                     {"censoring", c.censoring},
                     {"replicates_run", c.replicates_run},
                     {"failures", c.failures},
                     {"rejections", c.rejections},
                     {c.alpha == 0.0 ? "type_i_error" : "power", c.rejection_rate},
                     {"tpr", c.tpr},
                     {"fpr", c.fpr},
                     {"ppv", c.ppv}});
  }
  j["cells"] = cells;
  return j;
}

std::string metrics_csv_header() {
  return "method,sigma2,alpha,rho,censoring,replicates_run,failures,rejections,"
         "rejection_rate,metric_label,tpr,fpr,ppv\n";
}

std::string metrics_csv_rows(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& c : report.cells) {
    out << method_name(report.method) << ',' << report.config.sigma2 << ',' << c.alpha
        << ',' << c.rho << ',' << c.censoring << ',' << c.replicates_run << ','
        << c.failures << ',' << c.rejections << ',' << c.rejection_rate << ','
        << (c.alpha == 0.0 ? "type_i_error" : "power") << ',' << c.tpr << ',' << c.fpr
        << ',' << c.ppv << '\n';
  }
  return out.str();
}

SimulationConfig config_from_json(const Json& j) {
  SimulationConfig config;
  const auto get = [&](const char* key) { return j.contains(key); };
  if (get("region")) config.region_name = j.at("region").get<std::string>();
  if (get("units_path")) config.units_path = j.at("units_path").get<std::string>();
  if (get("adjacency_path"))
    config.adjacency_path = j.at("adjacency_path").get<std::string>();
  if (get("cluster_unit_ids"))
    config.cluster_unit_ids = j.at("cluster_unit_ids").get<std::vector<std::string>>();
  if (get("individuals_per_unit"))
    config.custom_individuals_per_unit = j.at("individuals_per_unit").get<std::size_t>();
  if (get("alpha_grid")) config.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
  if (get("rho_grid")) config.rho_grid = j.at("rho_grid").get<std::vector<double>>();
  if (get("sigma2")) config.sigma2 = j.at("sigma2").get<double>();
  if (get("censoring_targets"))
    config.censoring_targets = j.at("censoring_targets").get<std::vector<double>>();
  if (get("replicates")) config.replicates = j.at("replicates").get<int>();
  if (get("mc_replicates")) config.mc_replicates = j.at("mc_replicates").get<int>();
  if (get("bf_threshold")) config.bf_threshold = j.at("bf_threshold").get<double>();
  if (get("level")) config.level = j.at("level").get<double>();
  if (get("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  return config;
}

Json config_to_json(const SimulationConfig& config) {
  Json j;
  j["region"] = config.region_name;
  if (config.units_path) j["units_path"] = *config.units_path;
  if (config.adjacency_path) j["adjacency_path"] = *config.adjacency_path;
  if (!config.cluster_unit_ids.empty()) j["cluster_unit_ids"] = config.cluster_unit_ids;
  if (config.region_name == "custom")
    j["individuals_per_unit"] = config.custom_individuals_per_unit;
  j["alpha_grid"] = config.alpha_grid;
  j["rho_grid"] = config.rho_grid;
  j["sigma2"] = config.sigma2;
  j["censoring_targets"] = config.censoring_targets;
  j["replicates"] = config.replicates;
  j["mc_replicates"] = config.mc_replicates;
  j["bf_threshold"] = config.bf_threshold;
  j["level"] = config.level;
  j["seed"] = config.seed;
  return j;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::uint64_t hash = 1469598103934665603ull;
  char buffer[8192];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buffer[i]);
      hash *= 1099511628211ull;
    }
    if (got < static_cast<std::streamsize>(sizeof(buffer))) break;
  }
  return hash;
}

Json manifest_json(const std::string& command, const Json& resolved_config,
                   std::uint64_t seed, const std::vector<ManifestInput>& inputs,
                   double wall_clock_seconds) {
  Json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["config"] = resolved_config;
  Json ins = Json::array();
  for (const auto& input : inputs) {
    std::ostringstream digest;
    digest << std::hex << fnv1a64_file(input.path);
    ins.push_back({{"role", input.role},
                   {"path", input.path},
                   {"fnv1a64", digest.str()}});
  }
  j["inputs"] = ins;
  j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path);
  out << content;
}

std::string null_lambdas_csv(const SignificanceReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "replicate,lambda\n";
  for (std::size_t m = 0; m < report.null_lambdas.size(); ++m)
    out << m << ',' << report.null_lambdas[m] << '\n';
  return out.str();
}

}  // namespace frailtyscan
