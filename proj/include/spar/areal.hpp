#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <utility>
#include <vector>

namespace spar {

// sorted symmetric neighbor lists, no self edges
using NeighborLists = std::vector<std::vector<int>>;

struct ArealMap {
  int n_units = 0;
  NeighborLists neighbors;
  std::vector<std::array<double, 2>> centroids;  // empty when unknown

  bool has_centroids() const { return !centroids.empty(); }
  long long n_edges() const;
  void validate() const;  // throws on broken invariants
};

// Symmetric binary adjacency from an undirected edge list; duplicates
// collapse. Throws on out-of-range indices or self edges.
NeighborLists build_adjacency(const std::vector<std::pair<int, int>>& edges, int n_units);

// Every zero-degree unit gains one symmetric edge to its nearest-centroid
// unit (Euclidean distance, lowest index on ties). Connected units are left
// untouched; idempotent.
NeighborLists repair_islands(const NeighborLists& neighbors,
                             const std::vector<std::array<double, 2>>& centroids);

// dense 0/1 matrix; refuses n_units above the cap
Eigen::MatrixXd dense_adjacency(const NeighborLists& neighbors, int dense_cap = 5000);

struct Dataset {
  std::vector<std::string> unit_ids;
  std::vector<long long> y;
  std::vector<double> e;
  Eigen::MatrixXd exposures;    // K x q
  Eigen::MatrixXd confounders;  // K x p
  std::vector<std::string> exposure_names;
  std::vector<std::string> confounder_names;

  int n_units() const { return static_cast<int>(y.size()); }
  int exposure_index(const std::string& name) const;  // throws if unknown
  void validate() const;
};

std::vector<double> compute_smr(const std::vector<long long>& y, const std::vector<double>& e);

// --- file ingestion -------------------------------------------------------
// Dataset: header `unit_id,y,e,x_<name>...,z_<name>...`
// Adjacency: edge list `unit_id_a,unit_id_b` (undirected, duplicates allowed)
// Centroids: `unit_id,cx,cy`

Dataset load_dataset(const std::string& path);
std::vector<std::pair<int, int>> load_adjacency_edges(const std::string& path,
                                                      const Dataset& dataset);
std::vector<std::array<double, 2>> load_centroids(const std::string& path,
                                                  const Dataset& dataset);

void write_dataset(const std::string& path, const Dataset& dataset);
void write_adjacency(const std::string& path, const Dataset& dataset,
                     const NeighborLists& neighbors);
void write_centroids(const std::string& path, const Dataset& dataset,
                     const std::vector<std::array<double, 2>>& centroids);

}  // namespace spar
