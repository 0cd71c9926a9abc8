#include "frailtyscan/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <set>
#include <unordered_set>

#include "csv_util.hpp"
#include "frailtyscan/errors.hpp"

namespace frailtyscan {

StudyRegion::StudyRegion(std::vector<Unit> units,
                         const std::vector<std::pair<std::string, std::string>>& edges) {
  units_ = std::move(units);
  finalize();
  std::vector<std::set<std::size_t>> adj(units_.size());
  for (const auto& [a, b] : edges) {
    const std::size_t ka = index_of(a);
    const std::size_t kb = index_of(b);
    if (ka == kb)
      throw ValidationError("self edge not allowed: (" + a + "," + b + ")");
    adj[ka].insert(kb);
    adj[kb].insert(ka);
  }
  neighbors_.assign(units_.size(), {});
  for (std::size_t k = 0; k < units_.size(); ++k)
    neighbors_[k].assign(adj[k].begin(), adj[k].end());
}

StudyRegion StudyRegion::from_adjacency_matrix(std::vector<Unit> units,
                                               const Eigen::MatrixXd& adjacency) {
  StudyRegion region;
  region.units_ = std::move(units);
  region.finalize();
  const auto K = static_cast<Eigen::Index>(region.units_.size());
  if (adjacency.rows() != K || adjacency.cols() != K)
    throw ValidationError("adjacency matrix shape does not match unit count");
  for (Eigen::Index k = 0; k < K; ++k) {
    if (adjacency(k, k) != 0.0)
      throw ValidationError("adjacency diagonal must be zero at unit " +
                            region.units_[static_cast<std::size_t>(k)].id);
    for (Eigen::Index l = 0; l < K; ++l) {
      const double v = adjacency(k, l);
      if (v != 0.0 && v != 1.0)
        throw ValidationError("adjacency entries must be 0 or 1");
      if (v != adjacency(l, k))
        throw ValidationError(
            "non-symmetric adjacency at pair (" +
            region.units_[static_cast<std::size_t>(k)].id + "," +
            region.units_[static_cast<std::size_t>(l)].id + ")");
    }
  }
  region.neighbors_.assign(region.units_.size(), {});
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index l = 0; l < K; ++l)
      if (adjacency(k, l) == 1.0)
        region.neighbors_[static_cast<std::size_t>(k)].push_back(static_cast<std::size_t>(l));
  return region;
}

StudyRegion StudyRegion::from_files(const std::string& units_csv_path,
                                    const std::string& adjacency_path) {
  auto units_in = detail::open_or_throw(units_csv_path);
  std::string line;
  if (!std::getline(units_in, line))
    throw ValidationError("empty units file: " + units_csv_path);
  if (detail::strip_cr(line) != "unit_id,x,y")
    throw ValidationError("units file must start with header 'unit_id,x,y'");
  std::vector<Unit> units;
  std::size_t row = 1;
  while (std::getline(units_in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 3)
      throw ValidationError("expected 3 fields at row " + std::to_string(row) +
                            " of " + units_csv_path);
    units.push_back(Unit{fields[0], detail::parse_double(fields[1], "x", row),
                         detail::parse_double(fields[2], "y", row)});
  }

  auto adj_in = detail::open_or_throw(adjacency_path);
  std::vector<std::pair<std::string, std::string>> edges;
  row = 0;
  while (std::getline(adj_in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 2)
      throw ValidationError("expected 2 fields at line " + std::to_string(row) +
                            " of " + adjacency_path);
    edges.emplace_back(fields[0], fields[1]);
  }
  StudyRegion region(std::move(units), edges);
  if (!region.connected())
    std::cerr << "warning: adjacency graph is not connected\n";
  return region;
}

void StudyRegion::finalize() {
  if (units_.size() < 2) throw ValidationError("a study region needs at least 2 units");
  index_.clear();
  for (std::size_t k = 0; k < units_.size(); ++k) {
    if (units_[k].id.empty()) throw ValidationError("empty unit id");
    if (!index_.emplace(units_[k].id, k).second)
      throw ValidationError("duplicate unit id: " + units_[k].id);
  }
}

std::size_t StudyRegion::index_of(const std::string& unit_id) const {
  const auto it = index_.find(unit_id);
  if (it == index_.end()) throw ValidationError("unknown unit id: " + unit_id);
  return it->second;
}

bool StudyRegion::adjacent(std::size_t k, std::size_t l) const {
  const auto& nb = neighbors_[k];
  return std::binary_search(nb.begin(), nb.end(), l);
}

bool StudyRegion::connected() const {
  std::vector<char> seen(size(), 0);
  std::deque<std::size_t> queue{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!queue.empty()) {
    const std::size_t k = queue.front();
    queue.pop_front();
    for (std::size_t l : neighbors_[k])
      if (!seen[l]) {
        seen[l] = 1;
        ++count;
        queue.push_back(l);
      }
  }
  return count == size();
}

NeighborMatrix build_neighbor_matrix(const StudyRegion& region) {
  const auto K = static_cast<Eigen::Index>(region.size());
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(K, K);
  for (std::size_t k = 0; k < region.size(); ++k) {
    const auto& nb = region.neighbors()[k];
    R(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) =
        static_cast<double>(nb.size());
    for (std::size_t l : nb)
      R(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = -1.0;
  }
  return NeighborMatrix{std::move(R)};
}

PrecisionModel leroux_precision(const NeighborMatrix& nm, double rho, double sigma2) {
  if (!(rho >= 0.0 && rho < 1.0))
    throw ValidationError(
        "rho must lie in [0, 1); for the intrinsic CAR limit use rho = 0.999");
  if (!(sigma2 > 0.0)) throw ValidationError("sigma2 must be positive");
  PrecisionModel model;
  model.rho = rho;
  model.sigma2 = sigma2;
  model.A = rho * nm.R +
            (1.0 - rho) * Eigen::MatrixXd::Identity(nm.R.rows(), nm.R.cols());
  return model;
}

std::vector<CandidateWindow> enumerate_windows(const StudyRegion& region,
                                               const std::vector<std::size_t>& unit_counts) {
  const std::size_t K = region.size();
  if (unit_counts.size() != K)
    throw ValidationError("unit_counts length does not match region size");
  std::size_t total = 0;
  for (std::size_t c : unit_counts) total += c;
  if (total < 2) throw ValidationError("need at least 2 individuals to form windows");
  const double cap = static_cast<double>(total) / 2.0;

  // Centers visited in unit-id order so output order is stable.
  std::vector<std::size_t> centers(K);
  for (std::size_t k = 0; k < K; ++k) centers[k] = k;
  std::sort(centers.begin(), centers.end(), [&](std::size_t a, std::size_t b) {
    return region.unit(a).id < region.unit(b).id;
  });

  std::vector<CandidateWindow> windows;
  std::unordered_set<std::string> seen;
  std::vector<std::size_t> order(K);
  for (std::size_t center : centers) {
    for (std::size_t k = 0; k < K; ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = region.squared_distance(center, a);
      const double db = region.squared_distance(center, b);
      if (da != db) return da < db;
      return region.unit(a).id < region.unit(b).id;
    });

    std::vector<std::size_t> members;
    std::size_t inside = 0;
    std::size_t i = 0;
    while (i < K) {
      // Ties: every unit on the boundary circle joins at once.
      const double r2 = region.squared_distance(center, order[i]);
      std::size_t j = i;
      while (j < K && region.squared_distance(center, order[j]) == r2) {
        members.push_back(order[j]);
        inside += unit_counts[order[j]];
        ++j;
      }
      i = j;
      if (static_cast<double>(inside) > cap) break;
      if (inside < 1) continue;

      std::vector<std::size_t> sorted_members = members;
      std::sort(sorted_members.begin(), sorted_members.end());
      std::string key;
      key.reserve(sorted_members.size() * 4);
      for (std::size_t m : sorted_members) {
        key += std::to_string(m);
        key += ',';
      }
      if (!seen.insert(key).second) continue;

      CandidateWindow w;
      w.center = center;
      w.members = std::move(sorted_members);
      w.n_individuals = inside;
      w.radius2 = r2;
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

}  // namespace frailtyscan
