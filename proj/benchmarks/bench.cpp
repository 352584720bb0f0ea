// Serial reference vs OpenMP kernel timings. The parallel paths are
// contract-bound to reproduce the serial results bit for bit; this target
// reports the speedups.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "spar/diagnostics.hpp"
#include "spar/forest.hpp"
#include "spar/inference.hpp"
#include "spar/rng.hpp"
#include "spar/simgen.hpp"
#include "spar/spatial_priors.hpp"

using namespace spar;
using clk = std::chrono::steady_clock;

namespace {

double ms_since(const clk::time_point& t0) {
  return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

void row(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-28s %10.1f ms %10.1f ms %8.2fx   %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, identical ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : omp_get_max_threads();
  std::printf("threads: %d\n", threads);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  // forest fitting over trees
  {
    auto eng = rng::make_engine(1, 0);
    const int n = 1500, p = 8;
    Eigen::MatrixXd z(n, p);
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) z(i, j) = rng::uniform01(eng);
      r(i) = std::sin(6.0 * z(i, 0)) + z(i, 1) * z(i, 2) + 0.3 * rng::normal(eng);
    }
    const ForestParams params{400, 3, 5, 7};
    auto t0 = clk::now();
    const Forest serial = fit_forest_reference(z, r, params);
    const double t_serial = ms_since(t0);
    t0 = clk::now();
    const Forest parallel = fit_forest(z, r, params, threads);
    const double t_parallel = ms_since(t0);
    const bool same =
        (predict(serial, z) - predict(parallel, z)).cwiseAbs().maxCoeff() == 0.0;
    row("forest-fit", t_serial, t_parallel, same);

    // out-of-bag prediction over rows
    t0 = clk::now();
    const OobPrediction a = oob_predict_reference(serial, z);
    const double t_oob_serial = ms_since(t0);
    t0 = clk::now();
    const OobPrediction b = oob_predict(serial, z, threads);
    const double t_oob_parallel = ms_since(t0);
    row("oob-predict", t_oob_serial, t_oob_parallel,
        (a.predictions - b.predictions).cwiseAbs().maxCoeff() == 0.0);
  }

  // permutation test over permutations
  {
    const ArealMap map = make_lattice_map(30);
    auto eng = rng::make_engine(2, 0);
    Eigen::VectorXd x(map.n_units);
    for (int k = 0; k < map.n_units; ++k) x(k) = rng::normal(eng);
    auto t0 = clk::now();
    const MoranResult a = moran_permutation_test_reference(x, map.neighbors, 20000, 5);
    const double t_serial = ms_since(t0);
    t0 = clk::now();
    const MoranResult b = moran_permutation_test(x, map.neighbors, 20000, 5, false, threads);
    const double t_parallel = ms_since(t0);
    row("moran-permutations", t_serial, t_parallel, a.p_value == b.p_value);
  }

  // MCMC over chains
  {
    const ArealMap map = make_lattice_map(12);
    SimScenario scen = parse_scenario("common-linear-good");
    scen.seed = 3;
    const SimulatedDataset sim = generate(scen, map);
    ModelSpec spec;
    spec.erf.kind = ErfKind::linear;
    spec.erf.exposure_index = 1;
    spec.precision = scale_icar(map.neighbors);
    spec.confounder_mode = ConfounderMode::linear;
    spec.mhat = Eigen::VectorXd::Zero(map.n_units);
    SamplerConfig cfg;
    cfg.n_chains = 2;
    cfg.burn_in = 400;
    cfg.n_samples = 800;
    cfg.thin = 4;
    cfg.seed = 9;
    auto t0 = clk::now();
    const PosteriorSamples a = sample_posterior_reference(sim.dataset, spec, cfg);
    const double t_serial = ms_since(t0);
    cfg.n_threads = threads;
    t0 = clk::now();
    const PosteriorSamples b = sample_posterior(sim.dataset, spec, cfg);
    const double t_parallel = ms_since(t0);
    row("mcmc-chains", t_serial, t_parallel,
        (a.phi - b.phi).cwiseAbs().maxCoeff() == 0.0);
  }

  return 0;
}
