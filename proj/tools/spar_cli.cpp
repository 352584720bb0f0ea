#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "spar/areal.hpp"
#include "spar/csv.hpp"
#include "spar/diagnostics.hpp"
#include "spar/simgen.hpp"
#include "spar/spar.hpp"
#include "spar/study.hpp"

namespace fs = std::filesystem;
using namespace spar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitWarning = 3;

struct CommonOpts {
  std::string data_path, adjacency_path, centroids_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int jobs = 0;
  bool no_timestamp = false;
};

struct LoadedInputs {
  Dataset data;
  ArealMap map;
};

LoadedInputs load_inputs(const CommonOpts& opts) {
  LoadedInputs in;
  in.data = load_dataset(opts.data_path);
  in.map.n_units = in.data.n_units();
  const auto edges = load_adjacency_edges(opts.adjacency_path, in.data);
  in.map.neighbors = build_adjacency(edges, in.data.n_units());
  if (!opts.centroids_path.empty())
    in.map.centroids = load_centroids(opts.centroids_path, in.data);
  return in;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_erf_curve(const std::string& path, const ErfPosterior& erf) {
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index j = 0; j < erf.grid.size(); ++j)
    rows.push_back({csv::format_double(erf.grid(j)), csv::format_double(erf.mean(j)),
                    csv::format_double(erf.lower95(j)), csv::format_double(erf.upper95(j))});
  csv::write_csv(path, {"x", "mean", "lower95", "upper95"}, rows);
}

void write_phi_map(const std::string& path, const Dataset& data, const FitResult& fit) {
  std::vector<std::vector<std::string>> rows;
  for (int k = 0; k < data.n_units(); ++k)
    rows.push_back({data.unit_ids[k], csv::format_double(fit.phi_mean(k)),
                    csv::format_double(fit.phi_lower95(k)),
                    csv::format_double(fit.phi_upper95(k))});
  csv::write_csv(path, {"unit_id", "mean", "lower95", "upper95"}, rows);
}

void write_posterior_samples(const std::string& path, const Dataset& data,
                             const FitResult& fit) {
  const PosteriorSamples& s = fit.samples;
  std::vector<std::string> header = {"beta0"};
  if (s.erf_params.cols() == 1) {
    header.push_back("alpha");
  } else {
    for (int j = 0; j < s.erf_params.cols(); ++j)
      header.push_back("gamma_" + std::to_string(j));
  }
  for (int j = 0; j < s.delta.cols(); ++j)
    header.push_back("delta_" + data.confounder_names[j]);
  for (int k = 0; k < data.n_units(); ++k) header.push_back("phi_" + data.unit_ids[k]);
  header.push_back("tau_phi");
  header.push_back("rho");

  std::vector<std::vector<std::string>> rows;
  rows.reserve(s.n_samples);
  for (int i = 0; i < s.n_samples; ++i) {
    std::vector<std::string> row = {csv::format_double(s.beta0[i])};
    for (int j = 0; j < s.erf_params.cols(); ++j)
      row.push_back(csv::format_double(s.erf_params(i, j)));
    for (int j = 0; j < s.delta.cols(); ++j)
      row.push_back(csv::format_double(s.delta(i, j)));
    for (int k = 0; k < data.n_units(); ++k) row.push_back(csv::format_double(s.phi(i, k)));
    row.push_back(csv::format_double(s.tau_phi[i]));
    row.push_back(csv::format_double(s.rho[i]));
    rows.push_back(std::move(row));
  }
  csv::write_csv(path, header, rows);
}

void write_metrics(const std::string& path, const std::string& model, const FitMetrics& m) {
  csv::write_csv(path, {"model", "d_bar", "d_at_mean", "waic", "p_w", "moran_i", "moran_p"},
                 {{model, csv::format_double(m.d_bar), csv::format_double(m.d_at_mean),
                   csv::format_double(m.waic), csv::format_double(m.p_w),
                   csv::format_double(m.moran_i), csv::format_double(m.moran_p)}});
}

void write_fit_report(const std::string& path, const std::string& model,
                      const std::string& erf_name, const std::string& exposure,
                      const CommonOpts& opts, const SparConfig& cfg, const FitResult& fit,
                      const RrSummary& rr, double rr_delta) {
  std::ofstream out(path);
  out << "command = fit\n";
  out << "model = " << model << "\n";
  out << "erf = " << erf_name << "\n";
  out << "exposure = " << exposure << "\n";
  out << "seed = " << opts.seed << "\n";
  out << "epsilon = " << csv::format_double(cfg.epsilon) << "\n";
  out << "q_samples = " << cfg.q_samples << "\n";
  out << "trees_per_sample = " << cfg.trees_per_sample << "\n";
  out << "max_iterations = " << cfg.max_iterations << "\n";
  out << "zero_count_offset = " << csv::format_double(cfg.zero_count_offset) << "\n";
  out << "chains = " << cfg.sampler.n_chains << "\n";
  out << "samples_per_chain = " << cfg.sampler.n_samples << "\n";
  out << "burn_in = " << cfg.sampler.burn_in << "\n";
  out << "thin = " << cfg.sampler.thin << "\n";
  out << "retained_draws = " << fit.samples.n_samples << "\n";
  out << "iterations = " << fit.iterations << "\n";
  out << "converged = " << (fit.converged ? "true" : "false") << "\n";
  out << "final_diff = "
      << (fit.erf_trace.empty() ? "nan" : csv::format_double(fit.erf_trace.back())) << "\n";
  out << "max_rhat = " << csv::format_double(fit.samples.max_rhat) << "\n";
  out << "accept_latent_block = " << csv::format_double(fit.samples.accept_w) << "\n";
  out << "d_bar = " << csv::format_double(fit.metrics.d_bar) << "\n";
  out << "d_at_mean = " << csv::format_double(fit.metrics.d_at_mean) << "\n";
  out << "waic = " << csv::format_double(fit.metrics.waic) << "\n";
  out << "p_w = " << csv::format_double(fit.metrics.p_w) << "\n";
  out << "residual_moran_i = " << csv::format_double(fit.metrics.moran_i) << "\n";
  out << "residual_moran_p = " << csv::format_double(fit.metrics.moran_p) << "\n";
  out << "rr_delta = " << csv::format_double(rr_delta) << "\n";
  out << "rr_mean = " << csv::format_double(rr.mean) << "\n";
  out << "rr_lower95 = " << csv::format_double(rr.lower95) << "\n";
  out << "rr_upper95 = " << csv::format_double(rr.upper95) << "\n";
  for (const auto& w : fit.warnings) out << "warning = " << w << "\n";
  if (!opts.no_timestamp) {
    const std::time_t now = std::time(nullptr);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    out << "timestamp = " << buf << "\n";
  }
  out << "\ntrace:\n";
  out << "iteration,erf_diff,mtry,minnode,sigma2_m,step1_input_hash,step2_output_hash\n";
  for (const auto& rec : fit.records) {
    out << rec.iteration << ',' << csv::format_double(rec.erf_diff) << ',' << rec.mtry << ','
        << rec.minnode << ',' << csv::format_double(rec.sigma2_m) << ','
        << hex64(rec.step1_input_hash) << ',' << hex64(rec.step2_output_hash) << "\n";
  }
}

int cmd_fit(const CommonOpts& opts, const std::string& model, const std::string& erf_name,
            const std::string& exposure, double sigma2_x, int n_bins, SparConfig cfg,
            double rr_delta, bool strict) {
  const LoadedInputs in = load_inputs(opts);

  ErfSpec erf;
  erf.kind = parse_erf_kind(erf_name);
  std::string effective_erf = erf_name;
  if (erf.kind == ErfKind::berkson_linear && sigma2_x == 0.0) {
    std::cerr << "note: berkson with sigma2-x 0 collapses to the linear ERF\n";
    erf.kind = ErfKind::linear;
    effective_erf = "linear";
  }
  erf.sigma2_x = sigma2_x;
  erf.n_bins = n_bins;
  erf.exposure_index = in.data.exposure_index(exposure);

  cfg.seed = opts.seed;
  cfg.n_threads = opts.jobs;

  FitResult fit;
  if (model == "spar" || model == "spar1") {
    cfg.mode = model == "spar1" ? SparConfig::Mode::one_shot : SparConfig::Mode::full;
    fit = fit_spar_forest_erf(in.data, in.map, erf, cfg);
  } else if (model == "glmm") {
    fit = run_glmm_baseline(in.data, in.map, erf, cfg);
  } else {
    throw std::invalid_argument("unknown model '" + model + "' (expected spar, spar1 or glmm)");
  }

  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);

  RrSummary rr{1.0, 1.0, 1.0};
  if (fit.samples.erf_params.cols() == 1) {
    std::vector<double> alphas;
    for (int s = 0; s < fit.samples.n_samples; ++s)
      alphas.push_back(fit.samples.erf_params(s, 0));
    rr = rr_report(alphas, rr_delta);
  }

  write_fit_report((out / "fit_report.txt").string(), model, effective_erf, exposure, opts, cfg,
                   fit, rr, rr_delta);
  write_erf_curve((out / "erf_curve.csv").string(), fit.erf_posterior);
  write_erf_curve((out / "rr_curve.csv").string(), rr_relative_to_min(fit.erf_posterior));
  write_phi_map((out / "phi_map.csv").string(), in.data, fit);
  write_posterior_samples((out / "posterior_samples.csv").string(), in.data, fit);
  write_metrics((out / "metrics.csv").string(), model, fit.metrics);

  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
  if (strict && !fit.warnings.empty()) return kExitWarning;
  return kExitOk;
}

int cmd_simulate(const std::string& scenario_name, int n_replicates, int lattice,
                 std::uint64_t seed, const std::string& out_dir) {
  const SimScenario base = parse_scenario(scenario_name);
  const ArealMap map = make_lattice_map(lattice);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  std::ofstream manifest(out / "manifest.txt");
  manifest << "scenario = " << scenario_name << "\n";
  manifest << "n_replicates = " << n_replicates << "\n";
  manifest << "lattice = " << lattice << "\n";
  manifest << "master_seed = " << seed << "\n";
  manifest << "alpha = " << csv::format_double(base.alpha) << "\n";
  manifest << "leroux_rho = " << csv::format_double(base.leroux_rho) << "\n";
  manifest << "\nreplicate,seed,dataset,truth,intercept\n";

  bool map_written = false;
  for (int r = 0; r < n_replicates; ++r) {
    SimScenario scen = base;
    scen.seed = rng::stream_seed(seed, static_cast<std::uint64_t>(r));
    const SimulatedDataset sim = generate(scen, map);
    const std::string data_name = "replicate_" + std::to_string(r) + "_data.csv";
    const std::string truth_name = "replicate_" + std::to_string(r) + "_truth.csv";
    write_dataset((out / data_name).string(), sim.dataset);

    std::vector<std::vector<std::string>> rows;
    for (int k = 0; k < map.n_units; ++k)
      rows.push_back({sim.dataset.unit_ids[k], csv::format_double(sim.g_true(k, 0)),
                      csv::format_double(sim.g_true(k, 1)), csv::format_double(sim.m_true(k)),
                      csv::format_double(sim.phi_true(k)),
                      csv::format_double(sim.theta_true(k))});
    csv::write_csv((out / truth_name).string(),
                   {"unit_id", "g_true_x1", "g_true_x2", "m_true", "phi_true", "theta_true"},
                   rows);
    manifest << r << ',' << scen.seed << ',' << data_name << ',' << truth_name << ','
             << csv::format_double(sim.intercept) << "\n";
    if (!map_written) {
      write_adjacency((out / "adjacency.csv").string(), sim.dataset, map.neighbors);
      write_centroids((out / "centroids.csv").string(), sim.dataset, map.centroids);
      map_written = true;
    }
  }
  return kExitOk;
}

int cmd_study(const std::string& scenario_name, int n_replicates, const std::string& models_csv,
              const std::string& exposure, int lattice, std::uint64_t seed, int jobs,
              const std::string& out_dir, SparConfig spar_cfg) {
  StudyConfig cfg;
  cfg.scenario = parse_scenario(scenario_name);
  cfg.n_replicates = n_replicates;
  cfg.models.clear();
  std::stringstream ss(models_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok != "spar" && tok != "spar1" && tok != "glmm")
      throw std::invalid_argument("unknown model '" + tok + "' (expected spar, spar1 or glmm)");
    cfg.models.push_back(tok);
  }
  if (cfg.models.empty()) throw std::invalid_argument("no models selected");
  cfg.exposure = exposure;
  cfg.lattice = lattice;
  cfg.seed = seed;
  cfg.jobs = jobs;
  cfg.spar = spar_cfg;
  cfg.erf.kind = ErfKind::linear;

  const auto rows = run_study(cfg, default_study_fit());
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_study_rows((out / "study_results.csv").string(), rows);
  write_study_summary((out / "study_summary.csv").string(), summarize_study(rows));
  for (const auto& r : rows)
    if (!r.ok)
      std::cerr << "warning: " << r.model << " replicate " << r.replicate
                << " failed: " << r.error << "\n";
  return kExitOk;
}

int cmd_moran(const CommonOpts& opts, const std::string& column, const std::string& values_path,
              int n_permutations, bool two_sided) {
  const LoadedInputs in = load_inputs(opts);
  Eigen::VectorXd x(in.data.n_units());
  if (!values_path.empty()) {
    const csv::Table t = csv::read_csv(values_path);
    if (t.header.size() != 2)
      throw std::runtime_error(values_path + ": expected two columns unit_id,value");
    std::unordered_map<std::string, int> ids;
    for (int k = 0; k < in.data.n_units(); ++k) ids.emplace(in.data.unit_ids[k], k);
    std::vector<bool> seen(in.data.n_units(), false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto it = ids.find(t.rows[r][0]);
      if (it == ids.end())
        throw std::runtime_error(values_path + ": unit_id '" + t.rows[r][0] +
                                 "' not present in the dataset");
      x(it->second) = csv::parse_double(t.rows[r][1], values_path, r + 2, t.header[1]);
      seen[it->second] = true;
    }
    for (int k = 0; k < in.data.n_units(); ++k)
      if (!seen[k])
        throw std::runtime_error(values_path + ": no value for unit_id '" +
                                 in.data.unit_ids[k] + "'");
  } else if (column == "smr") {
    const auto smr = compute_smr(in.data.y, in.data.e);
    for (int k = 0; k < in.data.n_units(); ++k) x(k) = smr[k];
  } else if (column == "log_smr") {
    x = adjusted_responses(in.data, Eigen::MatrixXd::Zero(1, in.data.n_units()), 0.5)
            .row(0)
            .transpose();
  } else if (column == "y") {
    for (int k = 0; k < in.data.n_units(); ++k) x(k) = static_cast<double>(in.data.y[k]);
  } else if (column == "e") {
    for (int k = 0; k < in.data.n_units(); ++k) x(k) = in.data.e[k];
  } else if (column.rfind("x_", 0) == 0) {
    x = in.data.exposures.col(in.data.exposure_index(column.substr(2)));
  } else if (column.rfind("z_", 0) == 0) {
    const std::string name = column.substr(2);
    int idx = -1;
    for (std::size_t j = 0; j < in.data.confounder_names.size(); ++j)
      if (in.data.confounder_names[j] == name) idx = static_cast<int>(j);
    if (idx < 0) throw std::invalid_argument("unknown confounder column '" + column + "'");
    x = in.data.confounders.col(idx);
  } else {
    throw std::invalid_argument("unknown column '" + column +
                                "' (expected smr, log_smr, y, e, x_<name> or z_<name>)");
  }

  const MoranResult res = moran_permutation_test(x, in.map.neighbors, n_permutations, opts.seed,
                                                 two_sided, opts.jobs);
  std::cout << "moran_i = " << csv::format_double(res.i_stat) << "\n";
  std::cout << "p_value = " << csv::format_double(res.p_value) << "\n";
  fs::create_directories(opts.out_dir);
  csv::write_csv((fs::path(opts.out_dir) / "moran.csv").string(),
                 {"i_stat", "p_value", "n_permutations"},
                 {{csv::format_double(res.i_stat), csv::format_double(res.p_value),
                   std::to_string(res.n_permutations)}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPAR-Forest-ERF: spatial random forest exposure-response estimation"};
  app.require_subcommand(1);
  app.set_config("--config");

  CommonOpts opts;
  SparConfig cfg;
  std::string model = "spar", erf_name = "linear", exposure;
  double sigma2_x = 0.0, rr_delta = 1.0;
  int n_bins = 50;
  bool strict = false;

  auto add_common = [&](CLI::App* sub, bool with_map) {
    sub->add_option("--seed", opts.seed, "RNG seed");
    sub->add_option("--jobs", opts.jobs, "worker threads (0 = all cores)");
    sub->add_option("--out", opts.out_dir, "output directory");
    if (with_map) {
      sub->add_option("--data", opts.data_path, "dataset CSV")->required();
      sub->add_option("--adjacency", opts.adjacency_path, "adjacency edge-list CSV")->required();
      sub->add_option("--centroids", opts.centroids_path, "centroid CSV");
    }
  };

  auto add_sampler = [&](CLI::App* sub) {
    sub->add_option("--chains", cfg.sampler.n_chains, "MCMC chains");
    sub->add_option("--samples", cfg.sampler.n_samples, "post-burn-in sweeps per chain");
    sub->add_option("--burn-in", cfg.sampler.burn_in, "burn-in sweeps per chain");
    sub->add_option("--thin", cfg.sampler.thin, "keep every thin-th sweep");
    sub->add_option("--epsilon", cfg.epsilon, "ERF stopping threshold");
    sub->add_option("--q-samples", cfg.q_samples, "posterior samples propagated to Step 1");
    sub->add_option("--trees-per-sample", cfg.trees_per_sample, "trees per posterior sample");
    sub->add_option("--tuning-trees", cfg.tuning_trees, "trees used during tuning");
    sub->add_option("--max-iterations", cfg.max_iterations, "iteration cap");
    sub->add_option("--zero-count-offset", cfg.zero_count_offset,
                    "half-count correction for zero counts");
    sub->add_option("--tau0", cfg.hyper.tau0, "half-normal precision for sd hyperpriors");
    sub->add_option("--pc-rho-mean", cfg.hyper.pc_rho_mean, "prior mean of logit(rho)");
    sub->add_option("--pc-rho-sd", cfg.hyper.pc_rho_sd, "prior sd of logit(rho)");
  };

  CLI::App* fit = app.add_subcommand("fit", "fit a model to a dataset");
  add_common(fit, true);
  add_sampler(fit);
  fit->add_option("--model", model, "spar | spar1 | glmm")->required();
  fit->add_option("--erf", erf_name, "linear | pspline | berkson");
  fit->add_option("--exposure", exposure, "exposure name (x_<name> column)")->required();
  fit->add_option("--sigma2-x", sigma2_x, "Berkson exposure error variance");
  fit->add_option("--n-bins", n_bins, "RW2 bins for the pspline ERF");
  fit->add_option("--rr-delta", rr_delta, "exposure increment for the RR report");
  fit->add_flag("--strict", strict, "escalate sampler warnings to exit code 3");
  fit->add_flag("--no-timestamp", opts.no_timestamp, "omit the timestamp line");

  std::string scenario_name;
  int n_replicates = 5, lattice = 15, n_perm = 10000;
  std::string models_csv = "glmm,spar,spar1";
  std::string column, values_path;
  bool two_sided = false;

  CLI::App* sim = app.add_subcommand("simulate", "write synthetic replicate datasets");
  add_common(sim, false);
  sim->add_option("--scenario", scenario_name, "scenario name")->required();
  sim->add_option("--n", n_replicates, "number of replicates");
  sim->add_option("--lattice", lattice, "lattice side length");

  CLI::App* study = app.add_subcommand("study", "simulation study: fit models to replicates");
  add_common(study, false);
  add_sampler(study);
  study->add_option("--scenario", scenario_name, "scenario name")->required();
  study->add_option("--n", n_replicates, "number of replicates");
  study->add_option("--lattice", lattice, "lattice side length");
  study->add_option("--models", models_csv, "comma-separated: spar,spar1,glmm");
  study->add_option("--exposure", exposure, "exposure to score (default x2)");

  CLI::App* moran = app.add_subcommand("moran", "Moran's I permutation test");
  add_common(moran, true);
  moran->add_option("--column", column, "dataset column (smr, log_smr, y, e, x_<n>, z_<n>)");
  moran->add_option("--values", values_path, "CSV of unit_id,value pairs");
  moran->add_option("--n-perm", n_perm, "number of permutations");
  moran->add_flag("--two-sided", two_sided, "two-sided alternative");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed())
      return cmd_fit(opts, model, erf_name, exposure, sigma2_x, n_bins, cfg, rr_delta, strict);
    if (sim->parsed())
      return cmd_simulate(scenario_name, n_replicates, lattice, opts.seed, opts.out_dir);
    if (study->parsed())
      return cmd_study(scenario_name, n_replicates, models_csv,
                       exposure.empty() ? "x2" : exposure, lattice, opts.seed, opts.jobs,
                       opts.out_dir, [&] { cfg.seed = opts.seed; return cfg; }());
    if (moran->parsed()) {
      if (column.empty() == values_path.empty())
        throw std::invalid_argument("moran needs exactly one of --column or --values");
      return cmd_moran(opts, column, values_path, n_perm, two_sided);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
