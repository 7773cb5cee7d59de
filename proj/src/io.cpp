#include "stitch/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "stitch/errors.hpp"

namespace stitch {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + path);
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

namespace {

json matrix_to_json(const MatrixXd& M) {
  json rows = json::array();
  for (long i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j) {
  const long rows = static_cast<long>(j.size());
  if (rows == 0) return MatrixXd(0, 0);
  const long cols = static_cast<long>(j.at(0).size());
  MatrixXd M(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long c = 0; c < cols; ++c) M(i, c) = j.at(i).at(c).get<double>();
  return M;
}

json vector_to_json(const VectorXd& v) {
  json arr = json::array();
  for (long i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

VectorXd vector_from_json(const json& j) {
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json lds_to_json(const LdsParams& params) {
  json doc;
  doc["n"] = params.n();
  doc["p"] = params.p();
  doc["A"] = matrix_to_json(params.A);
  doc["Q"] = matrix_to_json(params.Q);
  doc["Pi0"] = matrix_to_json(params.Pi0);
  doc["R"] = vector_to_json(params.R);
  return doc;
}

LdsParams lds_from_json(const json& doc) {
  LdsParams params;
  params.A = matrix_from_json(doc.at("A"));
  params.Q = matrix_from_json(doc.at("Q"));
  params.Pi0 = matrix_from_json(doc.at("Pi0"));
  params.R = vector_from_json(doc.at("R"));
  return params;
}

void write_matrix_binary(const std::string& path, const MatrixXd& M) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  // Row-major (time-major) little-endian f64.
  std::vector<double> row(M.cols());
  for (long i = 0; i < M.rows(); ++i) {
    for (long j = 0; j < M.cols(); ++j) row[j] = M(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path);
}

MatrixXd read_matrix_binary(const std::string& path, long rows, long cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + path);
  MatrixXd M(rows, cols);
  std::vector<double> row(cols);
  for (long i = 0; i < rows; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw IoError("truncated binary payload: " + path);
    for (long j = 0; j < cols; ++j) M(i, j) = row[j];
  }
  return M;
}

void check_known_keys(const json& obj, std::initializer_list<const char*> keys,
                      const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) known = true;
    if (!known)
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

}  // namespace

void write_dataset(const std::string& dir, const MaskedTimeSeries& data,
                   const LdsParams* truth) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir);

  json header;
  header["p"] = data.scheme.p();
  header["T"] = data.scheme.T();
  header["dtype"] = "f64";
  header["layout"] = "time-major";
  write_text_file(dir + "/data.json", header.dump(2));

  // Masked copy: unobserved entries become quiet NaN on disk.
  MatrixXd masked = data.Y;
  const auto& segments = data.scheme.segments();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    for (int i = 0; i < data.scheme.p(); ++i)
      if (!data.scheme.segment_contains(static_cast<int>(s), i))
        masked.col(i).segment(seg.t_begin, seg.t_end - seg.t_begin).setConstant(nan);
  }
  write_matrix_binary(dir + "/data.bin", masked);
  write_text_file(dir + "/scheme.json", data.scheme.to_json());
  if (truth) {
    json doc = lds_to_json(*truth);
    doc["C"] = matrix_to_json(truth->C);
    write_text_file(dir + "/truth.json", doc.dump(2));
  }
}

Dataset read_dataset(const std::string& dir) {
  json header;
  try {
    header = json::parse(read_text_file(dir + "/data.json"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data.json: invalid JSON: ") + e.what());
  }
  const int p = header.at("p").get<int>();
  const long T = header.at("T").get<long>();
  if (header.at("dtype").get<std::string>() != "f64" ||
      header.at("layout").get<std::string>() != "time-major")
    throw ConfigError("data.json: unsupported dtype or layout");

  ObservationScheme scheme =
      ObservationScheme::from_json(read_text_file(dir + "/scheme.json"));
  if (scheme.p() != p || scheme.T() != T)
    throw ConfigError("scheme.json does not match data.json dimensions");

  MatrixXd Y = read_matrix_binary(dir + "/data.bin", T, p);
  // The NaN pattern must match the scheme exactly.
  for (long t = 0; t < T; ++t) {
    const int seg = scheme.segment_index(t);
    for (int i = 0; i < p; ++i) {
      const bool obs = scheme.segment_contains(seg, i);
      if (obs && !std::isfinite(Y(t, i)))
        throw IoError("data.bin: non-finite value at an observed entry");
      if (!obs && !std::isnan(Y(t, i)))
        throw IoError("data.bin: NaN mask does not match the scheme");
    }
  }

  Dataset ds;
  ds.data = MaskedTimeSeries::from_raw(std::move(Y), std::move(scheme));
  if (fs::exists(dir + "/truth.json")) {
    json doc = json::parse(read_text_file(dir + "/truth.json"));
    LdsParams truth = lds_from_json(doc);
    truth.C = matrix_from_json(doc.at("C"));
    ds.truth = std::move(truth);
  }
  return ds;
}

void write_params(const std::string& path, const FittedModel& model) {
  json doc;
  doc["method"] = model.method;
  doc["mode"] = model.mode == LatentMode::kLinear ? "linear" : "nonlinear";
  const MatrixXd& C = model.params.C;
  doc["n"] = static_cast<int>(C.cols());
  doc["p"] = static_cast<int>(C.rows());
  doc["A"] = matrix_to_json(model.params.A);
  doc["Q"] = matrix_to_json(model.params.Q);
  doc["Pi0"] = matrix_to_json(model.params.Pi0);
  doc["R"] = vector_to_json(model.params.R);
  if (model.moments) {
    json lags = json::array();
    for (const MatrixXd& Pi : model.moments->lags) lags.push_back(matrix_to_json(Pi));
    doc["Pi_lags"] = std::move(lags);
  }
  if (C.rows() > 10000) {
    const std::string sidecar = path + ".C.bin";
    write_matrix_binary(sidecar, C);
    doc["C_file"] = fs::path(sidecar).filename().string();
  } else {
    doc["C"] = matrix_to_json(C);
  }
  write_text_file(path, doc.dump(2));
}

FittedModel read_params(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("params: invalid JSON: ") + e.what());
  }
  FittedModel model;
  model.method = doc.value("method", "unknown");
  model.mode = doc.value("mode", "linear") == std::string("nonlinear")
                   ? LatentMode::kNonlinear
                   : LatentMode::kLinear;
  model.params = lds_from_json(doc);
  if (doc.contains("C_file")) {
    const int p = doc.at("p").get<int>();
    const int n = doc.at("n").get<int>();
    const std::string sidecar =
        (fs::path(path).parent_path() / doc.at("C_file").get<std::string>()).string();
    model.params.C = read_matrix_binary(sidecar, p, n);
  } else {
    model.params.C = matrix_from_json(doc.at("C"));
  }
  if (doc.contains("Pi_lags")) {
    LatentMoments m;
    for (const json& j : doc.at("Pi_lags")) m.lags.push_back(matrix_from_json(j));
    model.moments = std::move(m);
  }
  return model;
}

void write_loss_trace_csv(const std::string& path,
                          const std::vector<LossTracePoint>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << "step,monitor_loss,wall_time_s\n";
  out.precision(17);
  for (const auto& pt : trace)
    out << pt.step << "," << pt.monitor_loss << "," << pt.wall_time_s << "\n";
}

void write_loglik_trace_csv(const std::string& path,
                            const std::vector<double>& loglik,
                            const std::vector<double>& wall_time_s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out << "iter,loglik,wall_time_s\n";
  out.precision(17);
  for (std::size_t k = 0; k < loglik.size(); ++k)
    out << (k + 1) << "," << loglik[k] << ","
        << (k < wall_time_s.size() ? wall_time_s[k] : 0.0) << "\n";
}

RunConfig parse_run_config(const std::string& path) {
  if (!fs::exists(path))
    throw ConfigError("config: file not found: " + path);
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON in ") + path + ": " +
                      e.what());
  }
  RunConfig cfg;
  try {
    check_known_keys(doc, {"sim", "scheme", "s3id", "sem", "eval"}, "top level");

    if (doc.contains("sim")) {
      const json& j = doc["sim"];
      check_known_keys(j,
                       {"p", "n", "T", "eig_modulus_range", "vonmises_kappa",
                        "private_noise_fraction", "seed"},
                       "sim");
      cfg.sim.p = j.at("p").get<int>();
      cfg.sim.n = j.at("n").get<int>();
      cfg.sim.T = j.at("T").get<long>();
      if (j.contains("eig_modulus_range")) {
        cfg.sim.eig_modulus_lo = j["eig_modulus_range"].at(0).get<double>();
        cfg.sim.eig_modulus_hi = j["eig_modulus_range"].at(1).get<double>();
      }
      cfg.sim.vonmises_kappa = j.value("vonmises_kappa", 1000.0);
      cfg.sim.private_noise_fraction = j.value("private_noise_fraction", 0.5);
      cfg.sim.seed = j.at("seed").get<std::uint64_t>();
    }
    if (doc.contains("scheme")) {
      const json& j = doc["scheme"];
      check_known_keys(j,
                       {"kind", "overlap_fraction", "k_subsets", "overlap",
                        "T1", "T2", "T_each"},
                       "scheme");
      cfg.scheme.kind = j.at("kind").get<std::string>();
      cfg.scheme.overlap_fraction = j.value("overlap_fraction", 0.1);
      cfg.scheme.k_subsets = j.value("k_subsets", 2);
      cfg.scheme.overlap = j.value("overlap", 0);
      cfg.scheme.T1 = j.value("T1", 0L);
      cfg.scheme.T2 = j.value("T2", 0L);
      cfg.scheme.T_each = j.value("T_each", 0L);
    }
    if (doc.contains("s3id")) {
      const json& j = doc["s3id"];
      check_known_keys(j,
                       {"n", "max_lag", "lag_weights", "batch_size", "adam",
                        "passes", "mode", "monitor_pairs", "monitor_every",
                        "min_pair_count", "seed"},
                       "s3id");
      cfg.s3id.n = j.at("n").get<int>();
      cfg.s3id.max_lag = j.value("max_lag", 1);
      if (j.contains("lag_weights"))
        cfg.s3id.lag_weights = j["lag_weights"].get<std::vector<double>>();
      cfg.s3id.batch_size = j.value("batch_size", 20);
      if (j.contains("adam")) {
        const json& ja = j["adam"];
        check_known_keys(ja, {"step_size", "beta1", "beta2", "epsilon"},
                         "s3id.adam");
        cfg.s3id.adam.step_size = ja.value("step_size", 1e-3);
        cfg.s3id.adam.beta1 = ja.value("beta1", 0.9);
        cfg.s3id.adam.beta2 = ja.value("beta2", 0.999);
        cfg.s3id.adam.epsilon = ja.value("epsilon", 1e-8);
      }
      cfg.s3id.passes = j.value("passes", 1);
      const std::string mode = j.value("mode", "linear");
      if (mode == "linear")
        cfg.s3id.mode = LatentMode::kLinear;
      else if (mode == "nonlinear")
        cfg.s3id.mode = LatentMode::kNonlinear;
      else
        throw ConfigError("config: s3id.mode must be linear or nonlinear");
      cfg.s3id.min_pair_count = j.value("min_pair_count", 10L);
      cfg.s3id.monitor_pairs = j.value("monitor_pairs", 10000);
      cfg.s3id.monitor_every = j.value("monitor_every", 100);
      cfg.s3id.seed = j.at("seed").get<std::uint64_t>();
    }
    if (doc.contains("sem")) {
      const json& j = doc["sem"];
      check_known_keys(j,
                       {"n", "max_iters", "loglik_rel_tol", "cov_converge_tol",
                        "restarts", "seed"},
                       "sem");
      cfg.sem.n = j.at("n").get<int>();
      cfg.sem.max_iters = j.value("max_iters", 200);
      cfg.sem.loglik_rel_tol = j.value("loglik_rel_tol", 1e-8);
      cfg.sem.cov_converge_tol = j.value("cov_converge_tol", 1e-9);
      cfg.sem.restarts = j.value("restarts", 4);
      cfg.sem.seed = j.at("seed").get<std::uint64_t>();
    }
    if (doc.contains("eval")) {
      const json& j = doc["eval"];
      check_known_keys(j, {"max_lag", "pair_sample", "seed"}, "eval");
      cfg.eval.max_lag = j.value("max_lag", 1);
      cfg.eval.pair_sample = j.value("pair_sample", 1000000L);
      cfg.eval.seed = j.at("seed").get<std::uint64_t>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: missing or malformed field: ") +
                      e.what());
  }
  return cfg;
}

ObservationScheme build_scheme(const SchemeConfig& cfg, int p, long T) {
  if (cfg.kind == "two_subset") {
    long T1 = cfg.T1, T2 = cfg.T2;
    if (T1 == 0 && T2 == 0) {
      T1 = T / 2;
      T2 = T - T1;
    }
    return make_two_subset_scheme(p, cfg.overlap_fraction, T1, T2);
  }
  if (cfg.kind == "multi_subset") {
    long T_each = cfg.T_each;
    if (T_each == 0) T_each = T / cfg.k_subsets;
    return make_multi_subset_scheme(p, cfg.k_subsets, cfg.overlap, T_each);
  }
  throw ConfigError("config: scheme.kind must be two_subset or multi_subset");
}

}  // namespace stitch
