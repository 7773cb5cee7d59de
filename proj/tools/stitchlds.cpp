// Command-line pipeline: simulate / fit / eval on serial subset observations.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "stitch/errors.hpp"
#include "stitch/eval.hpp"
#include "stitch/io.hpp"
#include "stitch/lds.hpp"
#include "stitch/observation.hpp"
#include "stitch/rng.hpp"
#include "stitch/s3id.hpp"
#include "stitch/sem.hpp"

namespace {

using nlohmann::json;
using namespace stitch;

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

void apply_threads(int threads, bool deterministic) {
  if (threads <= 0) {
    if (const char* env = std::getenv("STITCH_THREADS")) threads = std::atoi(env);
  }
  if (deterministic || threads <= 0) threads = 1;
  Eigen::setNbThreads(threads);
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir) {
  RunConfig cfg = parse_run_config(config_path);
  if (cfg.sim.p <= 0 || cfg.sim.n <= 0 || cfg.sim.T <= 0)
    throw ConfigError("simulate: sim section with positive p, n, T required");
  LdsParams truth = generate_random_lds(cfg.sim);
  ObservationScheme scheme = build_scheme(cfg.scheme, cfg.sim.p, cfg.sim.T);
  auto [Y, X] = simulate(truth, scheme.T(), cfg.sim.seed);
  MaskedTimeSeries data = MaskedTimeSeries::from_raw(std::move(Y), std::move(scheme));
  write_dataset(out_dir, data, &truth);
  std::cout << "wrote dataset to " << out_dir << " (p=" << cfg.sim.p
            << ", T=" << data.scheme.T() << ")\n";
  return 0;
}

FittedModel fit_fa_posthoc(const Dataset& ds, const RunConfig& cfg) {
  const ObservationScheme& scheme = ds.data.scheme;
  const int n = cfg.sem.n > 0 ? cfg.sem.n : cfg.s3id.n;
  if (n <= 0) throw ConfigError("fa-posthoc: latent dimension required (sem.n or s3id.n)");

  std::vector<std::pair<std::vector<int>, MatrixXd>> estimates;
  VectorXd noise_sum = VectorXd::Zero(scheme.p());
  VectorXd noise_hits = VectorXd::Zero(scheme.p());
  for (std::size_t s = 0; s < scheme.segments().size(); ++s) {
    const Segment& seg = scheme.segments()[s];
    const std::vector<int>& idx = scheme.observed_indices(static_cast<int>(s));
    MatrixXd block(seg.t_end - seg.t_begin, idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c)
      block.col(c) = ds.data.Y.col(idx[c]).segment(seg.t_begin, seg.t_end - seg.t_begin);
    FaResult fa = fa_em(block, n, 100, cfg.sem.seed + s);
    for (std::size_t c = 0; c < idx.size(); ++c) {
      noise_sum(idx[c]) += fa.noise(c);
      noise_hits(idx[c]) += 1.0;
    }
    estimates.emplace_back(idx, std::move(fa.loadings));
  }

  FittedModel model;
  model.method = "fa-posthoc";
  model.params.C = posthoc_align(estimates, scheme.p(), 0);
  model.params.A = MatrixXd::Zero(n, n);
  model.params.Q = MatrixXd::Identity(n, n);
  model.params.Pi0 = MatrixXd::Identity(n, n);
  model.params.R = (noise_sum.array() / noise_hits.array().max(1.0)).matrix();
  return model;
}

int cmd_fit(const std::string& data_dir, const std::string& method,
            const std::string& config_path, const std::string& out_path) {
  if (method != "s3id" && method != "sem" && method != "s3id+sem" &&
      method != "fa-posthoc")
    throw ConfigError("fit: unknown method \"" + method +
                      "\" (expected s3id | sem | s3id+sem | fa-posthoc)");
  RunConfig cfg = parse_run_config(config_path);
  Dataset ds = read_dataset(data_dir);
  CooccurrenceGroups groups(ds.data.scheme);
  const std::string trace_path = out_path + ".trace.csv";

  FittedModel model;
  if (method == "s3id") {
    if (cfg.s3id.n <= 0) throw ConfigError("fit: s3id section required");
    S3idFit fit = fit_s3id(ds.data, groups, cfg.s3id);
    model.method = method;
    model.mode = cfg.s3id.mode;
    model.params = fit.params;
    if (cfg.s3id.mode == LatentMode::kNonlinear) model.moments = fit.moments;
    write_loss_trace_csv(trace_path, fit.trace);
  } else if (method == "sem") {
    if (cfg.sem.n <= 0) throw ConfigError("fit: sem section required");
    SemFit fit = fit_sem(ds.data, groups, cfg.sem);
    model.method = method;
    model.params = fit.params;
    write_loglik_trace_csv(trace_path, fit.loglik_trace, {});
  } else if (method == "s3id+sem") {
    if (cfg.s3id.n <= 0 || cfg.sem.n <= 0)
      throw ConfigError("fit: s3id and sem sections required");
    S3idConfig s3cfg = cfg.s3id;
    s3cfg.passes = 1;  // one pass, then hand the estimate to EM
    S3idFit warm = fit_s3id(ds.data, groups, s3cfg);
    // A near-singular innovation covariance from the warm start pins the
    // E-step to the subspace it spans; floor Q before handing off to EM.
    const int wn = warm.params.n();
    warm.params.Q = clamp_psd(warm.params.Q) +
                    0.1 * (warm.params.Pi0.trace() / wn) *
                        MatrixXd::Identity(wn, wn);
    SemFit fit = fit_sem(ds.data, groups, cfg.sem, warm.params);
    model.method = method;
    model.params = fit.params;
    write_loglik_trace_csv(trace_path, fit.loglik_trace, {});
  } else {
    model = fit_fa_posthoc(ds, cfg);
  }
  write_params(out_path, model);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& params_path, const std::string& data_dir,
             const std::string& config_path, const std::string& out_path) {
  RunConfig cfg = parse_run_config(config_path);
  FittedModel model = read_params(params_path);
  Dataset ds = read_dataset(data_dir);
  if (!ds.truth)
    throw ConfigError("eval: dataset has no truth.json (ground truth required)");
  const LdsParams& truth = *ds.truth;
  if (truth.p() != model.params.p())
    throw ConfigError("eval: params/truth dimension mismatch");

  EvalReport rep;
  rep.method = model.method;
  rep.projection_error = subspace_projection_error(truth.C, model.params.C);
  rep.largest_principal_angle_deg =
      largest_principal_angle_deg(truth.C, model.params.C);

  CooccurrenceGroups groups(ds.data.scheme);
  Rng rng = make_rng(cfg.eval.seed, "eval");
  for (int s = 0; s <= cfg.eval.max_lag; ++s) {
    std::vector<std::pair<int, int>> pairs = sample_never_co_observed_pairs(
        groups, truth.p(), s, static_cast<std::size_t>(cfg.eval.pair_sample), rng);
    if (pairs.empty())
      pairs = sample_co_observed_pairs(groups, truth.p(), s,
                                       static_cast<std::size_t>(cfg.eval.pair_sample),
                                       rng)
                  .pairs;
    const std::vector<double> tv = truth_covariances(truth, s, pairs);
    MatrixXd Pi_s;
    if (model.moments && s < static_cast<int>(model.moments->lags.size())) {
      Pi_s = model.moments->lags[s];
    } else {
      Pi_s = model.params.Pi0;
      for (int k = 0; k < s; ++k) Pi_s = (model.params.A * Pi_s).eval();
    }
    rep.prediction_correlation_per_lag.push_back(
        prediction_correlation(model.params.C, Pi_s, model.params.R, s, pairs, tv));
  }

  SpectrumReport spec = spectrum_report(model.params.Pi0, model.params.A);
  rep.pi0_spectrum = spec.pi0_eigenvalues;
  rep.a_spectrum = spec.a_eigen_moduli;

  json doc;
  doc["method"] = rep.method;
  doc["projection_error"] = rep.projection_error;
  doc["largest_principal_angle_deg"] = rep.largest_principal_angle_deg;
  doc["prediction_correlation_per_lag"] = rep.prediction_correlation_per_lag;
  doc["pi0_spectrum"] = rep.pi0_spectrum;
  doc["a_spectrum"] = rep.a_spectrum;
  write_text_file(out_path, doc.dump(2));

  {
    std::ofstream csv(out_path + ".spectra.csv");
    csv << "index,pi0_eigenvalue,a_eigen_modulus\n";
    for (std::size_t k = 0; k < rep.pi0_spectrum.size(); ++k)
      csv << (k + 1) << "," << rep.pi0_spectrum[k] << ","
          << (k < rep.a_spectrum.size() ? rep.a_spectrum[k] : 0.0) << "\n";
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

void write_diagnostics(const std::string& out_path, const std::string& message) {
  if (out_path.empty()) return;
  std::ofstream diag(out_path + ".diag.txt");
  diag << message << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent LDS identification from serial subset observations"};
  app.require_subcommand(1);

  int threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "Eigen thread count (env STITCH_THREADS as fallback)");
  app.add_flag("--deterministic", deterministic, "Force single-threaded deterministic reductions");

  std::string config_path, out_path, method = "s3id", data_dir, params_path;

  CLI::App* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  sim->add_option("--config", config_path, "Run config JSON")->required();
  sim->add_option("--out", out_path, "Output dataset directory")->required();

  CLI::App* fit = app.add_subcommand("fit", "Fit a model to a dataset");
  fit->add_option("data_dir", data_dir, "Dataset directory")->required();
  fit->add_option("--config", config_path, "Run config JSON")->required();
  fit->add_option("--method", method, "s3id | sem | s3id+sem | fa-posthoc");
  fit->add_option("--out", out_path, "Output params JSON path")->required();

  CLI::App* ev = app.add_subcommand("eval", "Evaluate fitted params against truth");
  ev->add_option("params", params_path, "Fitted params JSON")->required();
  ev->add_option("data_dir", data_dir, "Dataset directory (with truth.json)")->required();
  ev->add_option("--config", config_path, "Run config JSON")->required();
  ev->add_option("--out", out_path, "Output report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  apply_threads(threads, deterministic);

  try {
    if (sim->parsed()) return cmd_simulate(config_path, out_path);
    if (fit->parsed()) return cmd_fit(data_dir, method, config_path, out_path);
    if (ev->parsed()) return cmd_eval(params_path, data_dir, config_path, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    write_diagnostics(out_path, e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}
