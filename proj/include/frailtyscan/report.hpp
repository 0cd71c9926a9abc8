#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "frailtyscan/baselines.hpp"
#include "frailtyscan/frailty.hpp"
#include "frailtyscan/inference.hpp"
#include "frailtyscan/scan.hpp"
#include "frailtyscan/simulation.hpp"

namespace frailtyscan {

// Insertion-ordered JSON keeps reports byte-reproducible.
using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

Json scan_report_json(const StudyRegion& region,
                      const std::vector<CandidateWindow>& windows,
                      const FrailtySelection& selection, const ScanResult& scan,
                      const SignificanceReport& significance,
                      const std::vector<std::optional<double>>& hazard_ratios,
                      const std::string& model);

Json baseline_report_json(const StudyRegion& region,
                          const std::vector<CandidateWindow>& windows,
                          const BaselineScanResult& result,
                          const std::vector<std::optional<double>>& hazard_ratios);

// FeatureCollection of unit centroids tagged with their cluster role.
Json geojson_clusters(const StudyRegion& region,
                      const std::vector<CandidateWindow>& windows,
                      const ScanResult& scan);
Json geojson_clusters(const StudyRegion& region,
                      const std::vector<CandidateWindow>& windows,
                      std::size_t mlc_window,
                      const std::vector<std::size_t>& secondary_windows);

Json diagnostics_json(const FrailtySelection& selection);

Json metrics_json(const MetricsReport& report);
// One row per grid cell: method,sigma2,alpha,rho,censoring,... Reports from
// several runs concatenate under one header.
std::string metrics_csv_header();
std::string metrics_csv_rows(const MetricsReport& report);

SimulationConfig config_from_json(const Json& j);
Json config_to_json(const SimulationConfig& config);

std::uint64_t fnv1a64_file(const std::string& path);

struct ManifestInput {
  std::string role;
  std::string path;
};

Json manifest_json(const std::string& command, const Json& resolved_config,
                   std::uint64_t seed, const std::vector<ManifestInput>& inputs,
                   double wall_clock_seconds);

void write_text_file(const std::string& path, const std::string& content);

// Null Lambda histogram export for plotting.
std::string null_lambdas_csv(const SignificanceReport& report);

}  // namespace frailtyscan
