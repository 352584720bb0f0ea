#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spar/diagnostics.hpp"
#include "spar/simgen.hpp"
#include "spar/spar.hpp"

namespace spar {

// what the scorer needs from one model fit, at the observed exposures
struct StudyFit {
  Eigen::VectorXd g_mean, lower95, upper95;
  int iterations = 1;
  bool converged = true;
  double final_diff = 0.0;
  double moran_resid_i = 0.0;
  double moran_resid_p = 1.0;
};

struct StudyRow {
  std::string scenario;
  std::string model;
  int replicate = 0;
  bool ok = false;
  std::string error;
  ErfAccuracy accuracy;
  int iterations = 1;
  bool converged = true;
  double final_diff = 0.0;
  double moran_raw_i = 0.0;    // Moran's I of the raw log-SMR
  double moran_resid_i = 0.0;  // Moran's I of the fit's Pearson residuals
};

struct StudyConfig {
  SimScenario scenario;
  int n_replicates = 20;
  std::vector<std::string> models = {"glmm", "spar", "spar1"};
  std::string exposure = "x2";
  int lattice = 15;
  SparConfig spar;  // template; per-replicate seeds derived from study seed
  ErfSpec erf;
  std::uint64_t seed = 0;
  int jobs = 0;
};

using StudyFitFn = std::function<StudyFit(const SimulatedDataset& sim, const ArealMap& map,
                                          const std::string& model, const ErfSpec& erf,
                                          const SparConfig& spar)>;

// dispatches to run_spar / run_one_shot / run_glmm_baseline
StudyFitFn default_study_fit();

// Replicates run jobs-wide in parallel; rows come back ordered by replicate
// index then model, independent of scheduling. The fit function can be
// replaced for harness self-tests.
std::vector<StudyRow> run_study(const StudyConfig& config, const StudyFitFn& fit_fn);

struct StudySummary {
  std::string scenario, model;
  int n = 0;
  double bias_median = 0.0, rmse_median = 0.0, rmse_mean = 0.0;
  double coverage_mean = 0.0, miw_mean = 0.0;
};

std::vector<StudySummary> summarize_study(const std::vector<StudyRow>& rows);

void write_study_rows(const std::string& path, const std::vector<StudyRow>& rows);
void write_study_summary(const std::string& path, const std::vector<StudySummary>& summary);

}  // namespace spar
