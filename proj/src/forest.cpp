#include "spar/forest.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "spar/rng.hpp"
#include "spar/stats.hpp"

namespace spar {

void ForestParams::validate(int n_features) const {
  if (n_trees < 1) throw std::invalid_argument("ForestParams: n_trees must be >= 1");
  if (minnode < 1) throw std::invalid_argument("ForestParams: minnode must be >= 1");
  if (mtry < 1 || mtry > n_features)
    throw std::invalid_argument("ForestParams: mtry must lie in [1, n_features]");
}

double Tree::predict_row(const Eigen::MatrixXd& z, int row) const {
  int node = 0;
  while (!nodes[node].is_leaf()) {
    node = z(row, nodes[node].feature) <= nodes[node].threshold ? nodes[node].left
                                                                : nodes[node].right;
  }
  return nodes[node].value;
}

namespace {

struct GrowJob {
  int node;
  std::vector<int> rows;  // bootstrap rows, with multiplicity
};

Tree grow_tree(const Eigen::MatrixXd& z, const Eigen::VectorXd& r, const ForestParams& params,
               rng::Engine& eng) {
  const int n = static_cast<int>(z.rows());
  const int p = static_cast<int>(z.cols());

  Tree tree;
  tree.inbag_count.assign(n, 0);
  std::vector<int> sample(n);
  for (int i = 0; i < n; ++i) {
    sample[i] = rng::uniform_int(eng, n);
    ++tree.inbag_count[sample[i]];
  }

  std::vector<int> features(p);
  std::iota(features.begin(), features.end(), 0);
  std::vector<std::pair<double, int>> sorted;  // (value, row)

  tree.nodes.emplace_back();
  std::vector<GrowJob> stack;
  stack.push_back({0, std::move(sample)});

  while (!stack.empty()) {
    GrowJob job = std::move(stack.back());
    stack.pop_back();
    const auto& rows = job.rows;
    const int m = static_cast<int>(rows.size());

    double sum = 0.0, min_r = r(rows[0]), max_r = r(rows[0]);
    for (int i : rows) {
      sum += r(i);
      min_r = std::min(min_r, r(i));
      max_r = std::max(max_r, r(i));
    }
    const bool pure = !(max_r > min_r);

    auto make_leaf = [&]() {
      tree.nodes[job.node].feature = -1;
      tree.nodes[job.node].value = sum / m;
    };

    if (m <= params.minnode || pure) {
      make_leaf();
      continue;
    }

    // sample mtry distinct features; partial Fisher-Yates keeps the draw
    // order deterministic
    for (int i = 0; i < params.mtry; ++i) {
      const int j = i + rng::uniform_int(eng, p - i);
      std::swap(features[i], features[j]);
    }

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = -std::numeric_limits<double>::infinity();

    for (int fi = 0; fi < params.mtry; ++fi) {
      const int f = features[fi];
      sorted.clear();
      sorted.reserve(m);
      for (int i : rows) sorted.emplace_back(z(i, f), i);
      std::sort(sorted.begin(), sorted.end());

      double left_sum = 0.0;
      for (int i = 0; i + 1 < m; ++i) {
        left_sum += r(sorted[i].second);
        if (sorted[i + 1].first <= sorted[i].first) continue;  // no gap
        const int nl = i + 1;
        const int nr = m - nl;
        const double right_sum = sum - left_sum;
        const double score = left_sum * left_sum / nl + right_sum * right_sum / nr;
        if (score > best_score) {
          best_score = score;
          best_feature = f;
          best_threshold = 0.5 * (sorted[i].first + sorted[i + 1].first);
        }
      }
    }

    if (best_feature < 0) {  // all tried features constant in this node
      make_leaf();
      continue;
    }

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(m);
    right_rows.reserve(m);
    for (int i : rows)
      (z(i, best_feature) <= best_threshold ? left_rows : right_rows).push_back(i);

    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const int right_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[job.node].feature = best_feature;
    tree.nodes[job.node].threshold = best_threshold;
    tree.nodes[job.node].left = left_id;
    tree.nodes[job.node].right = right_id;
    stack.push_back({right_id, std::move(right_rows)});
    stack.push_back({left_id, std::move(left_rows)});
  }
  return tree;
}

Forest fit_forest_impl(const Eigen::MatrixXd& z, const Eigen::VectorXd& r,
                       const ForestParams& params, int n_threads, bool parallel) {
  const int n = static_cast<int>(z.rows());
  if (n < 2) throw std::invalid_argument("fit_forest: need at least 2 rows");
  if (r.size() != n) throw std::invalid_argument("fit_forest: response length mismatch");
  if (!r.allFinite() || !z.allFinite())
    throw std::invalid_argument("fit_forest: missing or non-finite values");
  params.validate(static_cast<int>(z.cols()));

  Forest forest;
  forest.n_rows = n;
  forest.n_features = static_cast<int>(z.cols());
  forest.trees.resize(params.n_trees);

  const int nt = parallel ? (n_threads > 0 ? n_threads : omp_get_max_threads()) : 1;
#pragma omp parallel for schedule(dynamic) num_threads(nt)
  for (int t = 0; t < params.n_trees; ++t) {
    auto eng = rng::make_engine(params.seed, static_cast<std::uint64_t>(t));
    forest.trees[t] = grow_tree(z, r, params, eng);
  }
  return forest;
}

}  // namespace

Forest fit_forest(const Eigen::MatrixXd& z, const Eigen::VectorXd& r, const ForestParams& params,
                  int n_threads) {
  return fit_forest_impl(z, r, params, n_threads, true);
}

Forest fit_forest_reference(const Eigen::MatrixXd& z, const Eigen::VectorXd& r,
                            const ForestParams& params) {
  return fit_forest_impl(z, r, params, 1, false);
}

Eigen::VectorXd predict(const Forest& forest, const Eigen::MatrixXd& z, int n_threads) {
  const int n = static_cast<int>(z.rows());
  Eigen::VectorXd out(n);
  const int nt = n_threads > 0 ? n_threads : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int k = 0; k < n; ++k) {
    std::vector<double> vals;
    vals.reserve(forest.trees.size());
    for (const auto& tree : forest.trees) vals.push_back(tree.predict_row(z, k));
    out(k) = stats::sorted_sum(std::move(vals)) / static_cast<double>(forest.trees.size());
  }
  return out;
}

namespace {

OobPrediction oob_predict_impl(const Forest& forest, const Eigen::MatrixXd& z, int n_threads,
                               bool parallel) {
  const int n = static_cast<int>(z.rows());
  if (n != forest.n_rows)
    throw std::invalid_argument("oob_predict: z must have the training row count");
  OobPrediction out;
  out.predictions.resize(n);
  out.counts.resize(n);

  const int nt = parallel ? (n_threads > 0 ? n_threads : omp_get_max_threads()) : 1;
#pragma omp parallel for schedule(static) num_threads(nt)
  for (int k = 0; k < n; ++k) {
    std::vector<double> vals;
    for (const auto& tree : forest.trees)
      if (tree.inbag_count[k] == 0) vals.push_back(tree.predict_row(z, k));
    out.counts(k) = static_cast<int>(vals.size());
    if (vals.empty()) {
      std::vector<double> all;
      all.reserve(forest.trees.size());
      for (const auto& tree : forest.trees) all.push_back(tree.predict_row(z, k));
      out.predictions(k) = stats::sorted_sum(std::move(all)) / static_cast<double>(forest.trees.size());
    } else {
      const auto m = static_cast<double>(vals.size());
      out.predictions(k) = stats::sorted_sum(std::move(vals)) / m;
    }
  }
  return out;
}

}  // namespace

OobPrediction oob_predict(const Forest& forest, const Eigen::MatrixXd& z, int n_threads) {
  return oob_predict_impl(forest, z, n_threads, true);
}

OobPrediction oob_predict_reference(const Forest& forest, const Eigen::MatrixXd& z) {
  return oob_predict_impl(forest, z, 1, false);
}

ForestParams tune_forest(const Eigen::MatrixXd& z, const Eigen::VectorXd& r,
                         const std::vector<std::pair<int, int>>& grid, int n_trees,
                         std::uint64_t seed, int n_threads) {
  if (grid.empty()) throw std::invalid_argument("tune_forest: empty grid");
  ForestParams best;
  double best_rmse = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (const auto& [mtry, minnode] : grid) {
    ForestParams params{n_trees, mtry, minnode, seed};
    const Forest f = fit_forest(z, r, params, n_threads);
    const OobPrediction oob = oob_predict(f, z, n_threads);
    double ss = 0.0;
    int m = 0;
    for (int k = 0; k < z.rows(); ++k) {
      if (oob.counts(k) == 0) continue;
      const double d = oob.predictions(k) - r(k);
      ss += d * d;
      ++m;
    }
    const double rmse = m > 0 ? std::sqrt(ss / m) : std::numeric_limits<double>::infinity();
    const bool better =
        !have_best || rmse < best_rmse ||
        (rmse == best_rmse && std::pair(mtry, minnode) < std::pair(best.mtry, best.minnode));
    if (better) {
      best = params;
      best_rmse = rmse;
      have_best = true;
    }
  }
  return best;
}

std::vector<std::pair<int, int>> default_tuning_grid(int n_features) {
  const int p = n_features;
  std::vector<int> mtries = {(p + 2) / 3, (p + 1) / 2, p};
  std::sort(mtries.begin(), mtries.end());
  mtries.erase(std::unique(mtries.begin(), mtries.end()), mtries.end());
  std::vector<std::pair<int, int>> grid;
  for (int mtry : mtries)
    for (int minnode : {5, 10, 25}) grid.emplace_back(mtry, minnode);
  return grid;
}

MultisampleForest fit_multisample_forest(const Eigen::MatrixXd& z,
                                         const Eigen::MatrixXd& r_samples, int trees_per_sample,
                                         int mtry, int minnode, std::uint64_t seed,
                                         int n_threads) {
  const int q = static_cast<int>(r_samples.rows());
  const int n = static_cast<int>(r_samples.cols());
  if (q < 1) throw std::invalid_argument("fit_multisample_forest: need Q >= 1 samples");
  if (n != z.rows()) throw std::invalid_argument("fit_multisample_forest: row count mismatch");

  std::vector<Forest> subs(q);
  const int nt = n_threads > 0 ? n_threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nt)
  for (int s = 0; s < q; ++s) {
    ForestParams params{trees_per_sample, mtry, minnode,
                        rng::stream_seed(seed, static_cast<std::uint64_t>(s))};
    subs[s] = fit_forest_reference(z, r_samples.row(s).transpose(), params);
  }

  MultisampleForest out;
  out.forest.n_rows = n;
  out.forest.n_features = static_cast<int>(z.cols());
  for (auto& sub : subs)
    for (auto& tree : sub.trees) out.forest.trees.push_back(std::move(tree));

  // weighted OOB aggregation across sub-forests
  Eigen::VectorXd pred_sum = Eigen::VectorXd::Zero(n);   // sum over OOB trees
  Eigen::VectorXd rtilde_num = Eigen::VectorXd::Zero(n); // sum_q n_qk R_qk
  Eigen::VectorXi total = Eigen::VectorXi::Zero(n);

  for (int s = 0; s < q; ++s) {
    const Forest& sub = out.forest;  // iterate the q-th block
    for (int t = s * trees_per_sample; t < (s + 1) * trees_per_sample; ++t) {
      const Tree& tree = sub.trees[t];
      for (int k = 0; k < n; ++k) {
        if (tree.inbag_count[k] != 0) continue;
        pred_sum(k) += tree.predict_row(z, k);
        rtilde_num(k) += r_samples(s, k);
        total(k) += 1;
      }
    }
  }

  OobEstimate& est = out.estimate;
  est.m_hat.resize(n);
  est.n_oob_trees = total;
  double ss = 0.0;
  int included = 0;
  for (int k = 0; k < n; ++k) {
    if (total(k) == 0) {
      est.zero_oob_rows.push_back(k);
      std::vector<double> all;
      all.reserve(out.forest.trees.size());
      for (const auto& tree : out.forest.trees) all.push_back(tree.predict_row(z, k));
      est.m_hat(k) = stats::sorted_sum(std::move(all)) / static_cast<double>(out.forest.trees.size());
      continue;
    }
    est.m_hat(k) = pred_sum(k) / total(k);
    const double rtilde = rtilde_num(k) / total(k);
    ss += (rtilde - est.m_hat(k)) * (rtilde - est.m_hat(k));
    ++included;
  }
  est.sigma2_m = included > 0 ? ss / included : 0.0;
  if (!est.zero_oob_rows.empty())
    std::cerr << "warning: " << est.zero_oob_rows.size()
              << " row(s) had no out-of-bag trees; full-ensemble fallback used\n";
  return out;
}

}  // namespace spar
