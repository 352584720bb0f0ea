#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace spar {

struct ForestParams {
  int n_trees = 500;
  int mtry = 1;
  int minnode = 5;
  std::uint64_t seed = 0;

  void validate(int n_features) const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;  // leaf mean

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<int> inbag_count;  // bootstrap multiplicity per training row

  double predict_row(const Eigen::MatrixXd& z, int row) const;
};

struct Forest {
  std::vector<Tree> trees;
  int n_rows = 0;
  int n_features = 0;
};

// Regression forest with bootstrap resampling (exactly K draws with
// replacement per tree) and variance-reduction splits on midpoints between
// adjacent observed values. Nodes split while their size exceeds minnode and
// the response is not pure. Deterministic given the seed, independent of the
// thread count.
Forest fit_forest(const Eigen::MatrixXd& z, const Eigen::VectorXd& r, const ForestParams& params,
                  int n_threads = 0);

// serial reference for the parallel kernel
Forest fit_forest_reference(const Eigen::MatrixXd& z, const Eigen::VectorXd& r,
                            const ForestParams& params);

// full-ensemble prediction; tree contributions are combined with an
// order-independent sum, so permuting trees leaves predictions unchanged
Eigen::VectorXd predict(const Forest& forest, const Eigen::MatrixXd& z, int n_threads = 0);

// Out-of-bag prediction on the training rows: row k averages only trees
// whose bootstrap excluded k. Rows with no such tree get count 0 and fall
// back to the full-ensemble prediction.
struct OobPrediction {
  Eigen::VectorXd predictions;
  Eigen::VectorXi counts;
};

OobPrediction oob_predict(const Forest& forest, const Eigen::MatrixXd& z, int n_threads = 0);
OobPrediction oob_predict_reference(const Forest& forest, const Eigen::MatrixXd& z);

// Grid search minimizing OOB RMSE; ties break toward smaller mtry, then
// smaller minnode. All candidates share the same seed.
ForestParams tune_forest(const Eigen::MatrixXd& z, const Eigen::VectorXd& r,
                         const std::vector<std::pair<int, int>>& grid, int n_trees,
                         std::uint64_t seed, int n_threads = 0);

std::vector<std::pair<int, int>> default_tuning_grid(int n_features);

struct OobEstimate {
  Eigen::VectorXd m_hat;      // weighted OOB predictions
  double sigma2_m = 0.0;      // mean squared OOB residual
  Eigen::VectorXi n_oob_trees;
  std::vector<int> zero_oob_rows;  // fell back to the full-ensemble prediction
};

struct MultisampleForest {
  Forest forest;  // sub-forests concatenated in sample order
  OobEstimate estimate;
};

// One sub-forest of `trees_per_sample` trees per response sample (distinct
// derived seeds), aggregated by OOB tree counts:
//   m_hat_k   = sum_q n_qk m_qk / sum_q n_qk
//   R_tilde_k = sum_q n_qk R_qk / sum_q n_qk
//   sigma2_m  = mean_k (R_tilde_k - m_hat_k)^2
// Rows with sum_q n_qk = 0 fall back to the full-ensemble prediction and are
// excluded from sigma2_m.
MultisampleForest fit_multisample_forest(const Eigen::MatrixXd& z,
                                         const Eigen::MatrixXd& r_samples,  // Q x K
                                         int trees_per_sample, int mtry, int minnode,
                                         std::uint64_t seed, int n_threads = 0);

}  // namespace spar
