#include "spar/areal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "spar/csv.hpp"

namespace spar {

long long ArealMap::n_edges() const {
  long long deg = 0;
  for (const auto& nb : neighbors) deg += static_cast<long long>(nb.size());
  return deg / 2;
}

void ArealMap::validate() const {
  if (n_units <= 0) throw std::invalid_argument("ArealMap: n_units must be positive");
  if (static_cast<int>(neighbors.size()) != n_units)
    throw std::invalid_argument("ArealMap: neighbor list size mismatch");
  for (int k = 0; k < n_units; ++k) {
    for (int j : neighbors[k]) {
      if (j < 0 || j >= n_units) throw std::invalid_argument("ArealMap: neighbor out of range");
      if (j == k) throw std::invalid_argument("ArealMap: self neighbor");
      if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), k))
        throw std::invalid_argument("ArealMap: adjacency not symmetric");
    }
    if (!std::is_sorted(neighbors[k].begin(), neighbors[k].end()))
      throw std::invalid_argument("ArealMap: neighbor lists must be sorted");
  }
  if (!centroids.empty() && static_cast<int>(centroids.size()) != n_units)
    throw std::invalid_argument("ArealMap: centroid count mismatch");
}

NeighborLists build_adjacency(const std::vector<std::pair<int, int>>& edges, int n_units) {
  if (n_units <= 0) throw std::invalid_argument("build_adjacency: n_units must be positive");
  std::vector<std::set<int>> nb(n_units);
  for (const auto& [a, b] : edges) {
    if (a < 0 || a >= n_units || b < 0 || b >= n_units)
      throw std::invalid_argument("build_adjacency: unit index " +
                                  std::to_string(a < 0 || a >= n_units ? a : b) +
                                  " outside [0," + std::to_string(n_units) + ")");
    if (a == b)
      throw std::invalid_argument("build_adjacency: self edge on unit " + std::to_string(a));
    nb[a].insert(b);
    nb[b].insert(a);
  }
  NeighborLists out(n_units);
  for (int k = 0; k < n_units; ++k) out[k].assign(nb[k].begin(), nb[k].end());
  return out;
}

NeighborLists repair_islands(const NeighborLists& neighbors,
                             const std::vector<std::array<double, 2>>& centroids) {
  const int n = static_cast<int>(neighbors.size());
  if (centroids.size() != neighbors.size())
    throw std::invalid_argument("repair_islands: centroids required for all units");
  std::vector<int> islands;
  for (int k = 0; k < n; ++k)
    if (neighbors[k].empty()) islands.push_back(k);
  if (islands.empty()) return neighbors;
  if (n == 1) throw std::invalid_argument("repair_islands: single unit has no candidate neighbor");

  NeighborLists out = neighbors;
  for (int k : islands) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == k) continue;
      const double dx = centroids[k][0] - centroids[j][0];
      const double dy = centroids[k][1] - centroids[j][1];
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < best_d) {  // strict: lowest index wins ties
        best_d = d;
        best = j;
      }
    }
    if (!std::binary_search(out[k].begin(), out[k].end(), best)) {
      out[k].insert(std::upper_bound(out[k].begin(), out[k].end(), best), best);
      out[best].insert(std::upper_bound(out[best].begin(), out[best].end(), k), k);
    }
  }
  return out;
}

Eigen::MatrixXd dense_adjacency(const NeighborLists& neighbors, int dense_cap) {
  const int n = static_cast<int>(neighbors.size());
  if (n > dense_cap)
    throw std::invalid_argument("dense_adjacency: " + std::to_string(n) +
                                " units exceeds dense cap " + std::to_string(dense_cap));
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k)
    for (int j : neighbors[k]) w(k, j) = 1.0;
  return w;
}

int Dataset::exposure_index(const std::string& name) const {
  for (std::size_t i = 0; i < exposure_names.size(); ++i)
    if (exposure_names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown exposure '" + name + "'");
}

void Dataset::validate() const {
  const int k = n_units();
  if (k == 0) throw std::invalid_argument("Dataset: empty");
  if (static_cast<int>(unit_ids.size()) != k || static_cast<int>(e.size()) != k ||
      exposures.rows() != k || confounders.rows() != k)
    throw std::invalid_argument("Dataset: row count mismatch");
  for (int i = 0; i < k; ++i) {
    if (y[i] < 0)
      throw std::invalid_argument("Dataset: negative count for unit " + unit_ids[i]);
    if (!(e[i] > 0.0))
      throw std::invalid_argument("Dataset: expected count must be positive for unit " +
                                  unit_ids[i]);
  }
  if (static_cast<int>(exposure_names.size()) != exposures.cols() ||
      static_cast<int>(confounder_names.size()) != confounders.cols())
    throw std::invalid_argument("Dataset: column name count mismatch");
}

std::vector<double> compute_smr(const std::vector<long long>& y, const std::vector<double>& e) {
  if (y.size() != e.size()) throw std::invalid_argument("compute_smr: length mismatch");
  std::vector<double> smr(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (!(e[k] > 0.0))
      throw std::invalid_argument("compute_smr: expected count must be positive (unit " +
                                  std::to_string(k) + ")");
    smr[k] = static_cast<double>(y[k]) / e[k];
  }
  return smr;
}

namespace {

std::unordered_map<std::string, int> id_index(const Dataset& d) {
  std::unordered_map<std::string, int> m;
  for (int k = 0; k < d.n_units(); ++k) m.emplace(d.unit_ids[k], k);
  return m;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  const csv::Table t = csv::read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "unit_id" || t.header[1] != "y" ||
      t.header[2] != "e")
    throw std::runtime_error(path + ": header must start with unit_id,y,e");

  Dataset d;
  std::vector<int> x_cols, z_cols;
  for (std::size_t c = 3; c < t.header.size(); ++c) {
    const std::string& h = t.header[c];
    if (h.rfind("x_", 0) == 0) {
      if (!z_cols.empty())
        throw std::runtime_error(path + ": exposure column '" + h +
                                 "' appears after confounder columns");
      x_cols.push_back(static_cast<int>(c));
      d.exposure_names.push_back(h.substr(2));
    } else if (h.rfind("z_", 0) == 0) {
      z_cols.push_back(static_cast<int>(c));
      d.confounder_names.push_back(h.substr(2));
    } else {
      throw std::runtime_error(path + ": column '" + h + "' must be prefixed x_ or z_");
    }
  }

  const int k = static_cast<int>(t.rows.size());
  if (k == 0) throw std::runtime_error(path + ": no data rows");
  d.unit_ids.resize(k);
  d.y.resize(k);
  d.e.resize(k);
  d.exposures.resize(k, static_cast<int>(x_cols.size()));
  d.confounders.resize(k, static_cast<int>(z_cols.size()));

  std::unordered_map<std::string, int> seen;
  for (int r = 0; r < k; ++r) {
    const auto& row = t.rows[r];
    const std::size_t lineno = static_cast<std::size_t>(r) + 2;
    d.unit_ids[r] = row[0];
    if (!seen.emplace(row[0], r).second)
      throw std::runtime_error(path + ": duplicate unit_id '" + row[0] + "'");
    d.y[r] = csv::parse_count(row[1], path, lineno, "y");
    d.e[r] = csv::parse_double(row[2], path, lineno, "e");
    for (std::size_t i = 0; i < x_cols.size(); ++i)
      d.exposures(r, static_cast<int>(i)) =
          csv::parse_double(row[x_cols[i]], path, lineno, t.header[x_cols[i]]);
    for (std::size_t i = 0; i < z_cols.size(); ++i)
      d.confounders(r, static_cast<int>(i)) =
          csv::parse_double(row[z_cols[i]], path, lineno, t.header[z_cols[i]]);
  }
  d.validate();
  return d;
}

std::vector<std::pair<int, int>> load_adjacency_edges(const std::string& path,
                                                      const Dataset& dataset) {
  const csv::Table t = csv::read_csv(path);
  if (t.header.size() != 2)
    throw std::runtime_error(path + ": adjacency file needs exactly two columns");
  const auto ids = id_index(dataset);
  std::vector<std::pair<int, int>> edges;
  edges.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto a = ids.find(row[0]);
    auto b = ids.find(row[1]);
    if (a == ids.end())
      throw std::runtime_error(path + ": row " + std::to_string(r + 2) + ": unit_id '" +
                               row[0] + "' not present in the dataset");
    if (b == ids.end())
      throw std::runtime_error(path + ": row " + std::to_string(r + 2) + ": unit_id '" +
                               row[1] + "' not present in the dataset");
    edges.emplace_back(a->second, b->second);
  }
  return edges;
}

std::vector<std::array<double, 2>> load_centroids(const std::string& path,
                                                  const Dataset& dataset) {
  const csv::Table t = csv::read_csv(path);
  if (t.header.size() != 3)
    throw std::runtime_error(path + ": centroid file needs columns unit_id,cx,cy");
  const auto ids = id_index(dataset);
  std::vector<std::array<double, 2>> centroids(dataset.n_units(),
                                               {std::numeric_limits<double>::quiet_NaN(),
                                                std::numeric_limits<double>::quiet_NaN()});
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto it = ids.find(row[0]);
    if (it == ids.end())
      throw std::runtime_error(path + ": row " + std::to_string(r + 2) + ": unit_id '" +
                               row[0] + "' not present in the dataset");
    centroids[it->second] = {csv::parse_double(row[1], path, r + 2, "cx"),
                             csv::parse_double(row[2], path, r + 2, "cy")};
  }
  for (int k = 0; k < dataset.n_units(); ++k)
    if (std::isnan(centroids[k][0]))
      throw std::runtime_error(path + ": no centroid for unit_id '" + dataset.unit_ids[k] + "'");
  return centroids;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  std::vector<std::string> header = {"unit_id", "y", "e"};
  for (const auto& n : dataset.exposure_names) header.push_back("x_" + n);
  for (const auto& n : dataset.confounder_names) header.push_back("z_" + n);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(dataset.n_units());
  for (int k = 0; k < dataset.n_units(); ++k) {
    std::vector<std::string> row = {dataset.unit_ids[k], std::to_string(dataset.y[k]),
                                    csv::format_double(dataset.e[k])};
    for (int j = 0; j < dataset.exposures.cols(); ++j)
      row.push_back(csv::format_double(dataset.exposures(k, j)));
    for (int j = 0; j < dataset.confounders.cols(); ++j)
      row.push_back(csv::format_double(dataset.confounders(k, j)));
    rows.push_back(std::move(row));
  }
  csv::write_csv(path, header, rows);
}

void write_adjacency(const std::string& path, const Dataset& dataset,
                     const NeighborLists& neighbors) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < neighbors.size(); ++k)
    for (int j : neighbors[k])
      if (static_cast<int>(k) < j)
        rows.push_back({dataset.unit_ids[k], dataset.unit_ids[j]});
  csv::write_csv(path, {"unit_id_a", "unit_id_b"}, rows);
}

void write_centroids(const std::string& path, const Dataset& dataset,
                     const std::vector<std::array<double, 2>>& centroids) {
  std::vector<std::vector<std::string>> rows;
  for (int k = 0; k < dataset.n_units(); ++k)
    rows.push_back({dataset.unit_ids[k], csv::format_double(centroids[k][0]),
                    csv::format_double(centroids[k][1])});
  csv::write_csv(path, {"unit_id", "cx", "cy"}, rows);
}

}  // namespace spar
