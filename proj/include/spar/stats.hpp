#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace spar::stats {

inline double mean(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("mean: empty input");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// sample variance (n-1 denominator)
inline double variance(const std::vector<double>& x) {
  if (x.size() < 2) throw std::invalid_argument("variance: need >= 2 values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

inline double sd(const std::vector<double>& x) { return std::sqrt(variance(x)); }

// linear-interpolation quantile (R type 7); input need not be sorted
inline double quantile(std::vector<double> x, double p) {
  if (x.empty()) throw std::invalid_argument("quantile: empty input");
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("quantile: p outside [0,1]");
  std::sort(x.begin(), x.end());
  const double h = p * static_cast<double>(x.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(h));
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline double median(const std::vector<double>& x) { return quantile(x, 0.5); }

inline double geometric_mean(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("geometric_mean: empty input");
  double s = 0.0;
  for (double v : x) {
    if (v <= 0.0) throw std::invalid_argument("geometric_mean: nonpositive value");
    s += std::log(v);
  }
  return std::exp(s / static_cast<double>(x.size()));
}

inline double logsumexp(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// order-independent sum: identical multisets give bit-identical results
inline double sorted_sum(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  return std::accumulate(x.begin(), x.end(), 0.0);
}

inline std::vector<double> to_vector(const Eigen::VectorXd& x) {
  return std::vector<double>(x.data(), x.data() + x.size());
}

// FNV-1a over raw bytes; used to fingerprint matrices passed between
// algorithm stages.
inline std::uint64_t hash_bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_matrix(const Eigen::MatrixXd& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      const auto* p = reinterpret_cast<const unsigned char*>(&v);
      for (std::size_t b = 0; b < sizeof(double); ++b) {
        h ^= p[b];
        h *= 0x100000001b3ULL;
      }
    }
  return h;
}

}  // namespace spar::stats
