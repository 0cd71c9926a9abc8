#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace frailtyscan {

struct Unit {
  std::string id;
  double x = 0.0;
  double y = 0.0;
};

// Spatial units with planar centroids and a symmetric binary adjacency.
// Immutable after construction; safe for concurrent reads.
class StudyRegion {
public:
  // Edge list is undirected; duplicate edges are ignored, self edges rejected.
  StudyRegion(std::vector<Unit> units,
              const std::vector<std::pair<std::string, std::string>>& edges);

  // Full binary relation; validates symmetry and a zero diagonal.
  static StudyRegion from_adjacency_matrix(std::vector<Unit> units,
                                           const Eigen::MatrixXd& adjacency);

  // Units file: CSV with header unit_id,x,y.
  // Adjacency file: one "unit_id_a,unit_id_b" edge per line.
  static StudyRegion from_files(const std::string& units_csv_path,
                                const std::string& adjacency_path);

  std::size_t size() const { return units_.size(); }
  const std::vector<Unit>& units() const { return units_; }
  const Unit& unit(std::size_t k) const { return units_[k]; }
  std::size_t index_of(const std::string& unit_id) const;

  bool adjacent(std::size_t k, std::size_t l) const;
  const std::vector<std::vector<std::size_t>>& neighbors() const { return neighbors_; }
  std::size_t degree(std::size_t k) const { return neighbors_[k].size(); }

  bool connected() const;

  double squared_distance(std::size_t k, std::size_t l) const {
    const double dx = units_[k].x - units_[l].x;
    const double dy = units_[k].y - units_[l].y;
    return dx * dx + dy * dy;
  }

private:
  StudyRegion() = default;
  void finalize();

  std::vector<Unit> units_;
  std::vector<std::vector<std::size_t>> neighbors_;  // sorted adjacency lists
  std::unordered_map<std::string, std::size_t> index_;
};

// R with diagonal = neighbor counts and off-diagonal = -v_{k,l}.
// Row sums are zero; PSD with rank K-1 on a connected graph.
struct NeighborMatrix {
  Eigen::MatrixXd R;
};

NeighborMatrix build_neighbor_matrix(const StudyRegion& region);

// A = rho * R + (1 - rho) * I, the precision of the spatial field up to the
// 1/sigma2 scale. Symmetric positive definite for rho in [0, 1).
struct PrecisionModel {
  double rho = 0.0;
  double sigma2 = 1.0;
  Eigen::MatrixXd A;
};

PrecisionModel leroux_precision(const NeighborMatrix& nm, double rho, double sigma2);

// A circular potential cluster: the units whose centroids fall inside the
// disc centred on `center` passing through the boundary unit (inclusive).
struct CandidateWindow {
  std::size_t center = 0;
  std::vector<std::size_t> members;  // ascending unit indices
  std::size_t n_individuals = 0;
  double radius2 = 0.0;
};

// All distance-ordered discs per center, deduplicated, retained iff
// 1 <= n_individuals <= N/2. Ordered by center id then radius.
std::vector<CandidateWindow> enumerate_windows(const StudyRegion& region,
                                               const std::vector<std::size_t>& unit_counts);

}  // namespace frailtyscan
