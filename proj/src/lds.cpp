#include "stitch/lds.hpp"

#include <algorithm>
#include <cmath>

#include "stitch/errors.hpp"
#include "stitch/rng.hpp"

namespace stitch {

namespace {

// Symmetric PSD square root, tolerant to tiny negative eigenvalues.
MatrixXd psd_sqrt(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()));
  VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double spectral_radius(const MatrixXd& A) {
  return A.eigenvalues().cwiseAbs().maxCoeff();
}

MatrixXd clamp_psd(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()));
  VectorXd d = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

void validate_lds(const LdsParams& params) {
  const int n = params.n();
  const int p = params.p();
  if (n <= 0 || p <= 0) throw ConfigError("empty LDS parameter set");
  if (params.A.cols() != n || params.C.cols() != n || params.Q.rows() != n ||
      params.Q.cols() != n || params.Pi0.rows() != n ||
      params.Pi0.cols() != n || params.R.size() != p)
    throw ConfigError("inconsistent LDS parameter dimensions");
  if (spectral_radius(params.A) >= 1.0)
    throw ConfigError("dynamics matrix A is not stable");
  const double qs = std::max(1.0, params.Q.norm());
  if ((params.Q - params.Q.transpose()).norm() > 1e-8 * qs)
    throw ConfigError("Q is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> esq(params.Q);
  if (esq.eigenvalues().minCoeff() < -1e-8 * qs)
    throw ConfigError("Q is not positive semidefinite");
  const double ps = std::max(1.0, params.Pi0.norm());
  if ((params.Pi0 - params.Pi0.transpose()).norm() > 1e-8 * ps)
    throw ConfigError("Pi0 is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> esp(params.Pi0);
  if (esp.eigenvalues().minCoeff() <= 0.0)
    throw ConfigError("Pi0 is not positive definite");
  if (params.R.minCoeff() < 0.0)
    throw ConfigError("R has negative entries");
}

MatrixXd solve_stationary_covariance(const MatrixXd& A, const MatrixXd& Q) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n || Q.rows() != n || Q.cols() != n)
    throw ConfigError("solve_stationary_covariance: dimension mismatch");
  const double tol = 1e-10 * std::max(1.0, Q.norm());
  MatrixXd X = 0.5 * (Q + Q.transpose());
  MatrixXd Ak = A;
  for (int iter = 0; iter < 200; ++iter) {
    const double resid = (A * X * A.transpose() + Q - X).norm();
    if (std::isfinite(resid) && resid <= tol) return 0.5 * (X + X.transpose());
    X = X + Ak * X * Ak.transpose();
    Ak = (Ak * Ak).eval();
    if (!X.allFinite())
      throw NumericalError(
          "solve_stationary_covariance: iteration diverged (unstable dynamics)");
  }
  throw NumericalError(
      "solve_stationary_covariance: no convergence after 200 iterations "
      "(unstable dynamics)");
}

LdsParams generate_random_lds(const SimConfig& cfg) {
  if (cfg.n <= 0 || cfg.p <= 0 || cfg.n > cfg.p)
    throw ConfigError("generate_random_lds: requires 0 < n <= p");
  if (!(cfg.eig_modulus_lo > 0.0) || !(cfg.eig_modulus_hi < 1.0) ||
      cfg.eig_modulus_lo > cfg.eig_modulus_hi)
    throw ConfigError("generate_random_lds: eigenvalue moduli must lie strictly inside (0, 1)");
  if (!(cfg.private_noise_fraction > 0.0) || !(cfg.private_noise_fraction < 1.0))
    throw ConfigError("generate_random_lds: private_noise_fraction must be in (0, 1)");
  const int n = cfg.n;

  VectorXd moduli(n);
  if (n == 1) {
    moduli(0) = 0.5 * (cfg.eig_modulus_lo + cfg.eig_modulus_hi);
  } else {
    for (int k = 0; k < n; ++k)
      moduli(k) = cfg.eig_modulus_lo +
                  (cfg.eig_modulus_hi - cfg.eig_modulus_lo) * k / (n - 1);
  }

  // Pair adjacent moduli into rotation blocks; for odd n the middle modulus
  // becomes a single real eigenvalue.
  std::vector<int> paired;
  int real_idx = -1;
  if (n % 2 == 1) real_idx = (n - 1) / 2;
  for (int k = 0; k < n; ++k)
    if (k != real_idx) paired.push_back(k);

  Rng rng = make_rng(cfg.seed, "lds");
  MatrixXd B = MatrixXd::Zero(n, n);
  int pos = 0;
  for (std::size_t k = 0; k + 1 < paired.size(); k += 2) {
    const double a = moduli(paired[k]);
    const double b = moduli(paired[k + 1]);
    // kappa -> infinity limit path: exact zero angle, real eigenvalues a, b.
    const double theta = cfg.vonmises_kappa >= 1e12
                             ? 0.0
                             : sample_von_mises(rng, cfg.vonmises_kappa);
    const double ct = std::cos(theta), st = std::sin(theta);
    // diag(a, b) times a rotation: eigenvalue moduli stay within [a, b].
    B(pos, pos) = a * ct;
    B(pos, pos + 1) = -a * st;
    B(pos + 1, pos) = b * st;
    B(pos + 1, pos + 1) = b * ct;
    pos += 2;
  }
  if (real_idx >= 0) B(pos, pos) = moduli(real_idx);

  // Random similarity transform with condition number capped at 10.
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd A;
  if (n == 1) {
    A = B;
  } else {
    MatrixXd G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) G(i, j) = normal(rng);
    Eigen::JacobiSVD<MatrixXd> svd(G, Eigen::ComputeFullU | Eigen::ComputeFullV);
    VectorXd sv(n);
    for (int k = 0; k < n; ++k)
      sv(k) = 1.0 + 9.0 * (n == 1 ? 0.0 : static_cast<double>(k) / (n - 1));
    const MatrixXd S = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
    A = S * B * S.inverse();
  }

  LdsParams params;
  params.A = A;
  params.Q = MatrixXd::Identity(n, n);
  params.Pi0 = solve_stationary_covariance(A, params.Q);

  params.C = MatrixXd(cfg.p, n);
  for (int i = 0; i < cfg.p; ++i)
    for (int j = 0; j < n; ++j) params.C(i, j) = normal(rng);

  // Scale rows of C so the shared signal accounts for 1 - phi of each
  // variable's variance, with the remaining phi set as private noise.
  const double phi = cfg.private_noise_fraction;
  params.R = VectorXd::Constant(cfg.p, phi);
  for (int i = 0; i < cfg.p; ++i) {
    const double sig = params.C.row(i) * params.Pi0 * params.C.row(i).transpose();
    params.C.row(i) *= std::sqrt((1.0 - phi) / sig);
  }
  return params;
}

LatentMoments linear_latent_moments(const LdsParams& params, int max_lag) {
  LatentMoments m;
  m.lags.reserve(max_lag + 1);
  MatrixXd As = MatrixXd::Identity(params.n(), params.n());
  for (int s = 0; s <= max_lag; ++s) {
    m.lags.push_back(As * params.Pi0);
    As = (params.A * As).eval();
  }
  return m;
}

double predicted_cov_entry(const MatrixXd& C, const MatrixXd& Pi_s,
                           const VectorXd& R, int s, int i, int j) {
  double v = C.row(i) * Pi_s * C.row(j).transpose();
  if (s == 0 && i == j) v += R(i);
  return v;
}

MatrixXd predicted_lagged_cov_block(const MatrixXd& C, const MatrixXd& Pi_s,
                                    const VectorXd& R, int s,
                                    const std::vector<int>& rows,
                                    const std::vector<int>& cols) {
  MatrixXd Cr(rows.size(), C.cols()), Cc(cols.size(), C.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) Cr.row(k) = C.row(rows[k]);
  for (std::size_t k = 0; k < cols.size(); ++k) Cc.row(k) = C.row(cols[k]);
  MatrixXd block = Cr * Pi_s * Cc.transpose();
  if (s == 0) {
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t b = 0; b < cols.size(); ++b)
        if (rows[a] == cols[b]) block(a, b) += R(rows[a]);
  }
  return block;
}

namespace {

MatrixXd full_lagged_cov(const MatrixXd& C, const MatrixXd& Pi_s,
                         const VectorXd& R, int s) {
  if (C.rows() > 20000)
    throw ConfigError(
        "predicted_lagged_cov: refusing to materialize a full matrix for p > 20000; "
        "use the sub-block interface");
  MatrixXd L = C * Pi_s * C.transpose();
  if (s == 0) L += MatrixXd(R.asDiagonal());
  return L;
}

}  // namespace

MatrixXd predicted_lagged_cov(const LdsParams& params, int s) {
  if (s < 0) throw ConfigError("predicted_lagged_cov: negative lag");
  MatrixXd Pi_s = params.Pi0;
  for (int k = 0; k < s; ++k) Pi_s = (params.A * Pi_s).eval();
  return full_lagged_cov(params.C, Pi_s, params.R, s);
}

MatrixXd predicted_lagged_cov(const MatrixXd& C, const LatentMoments& moments,
                              const VectorXd& R, int s) {
  if (s < 0 || s > moments.max_lag())
    throw ConfigError("predicted_lagged_cov: lag beyond stored moments");
  return full_lagged_cov(C, moments.lags[s], R, s);
}

std::pair<MatrixXd, MatrixXd> simulate(const LdsParams& params, long T,
                                       std::uint64_t seed) {
  if (T < 2) throw ConfigError("simulate: T must be at least 2");
  const int n = params.n();
  const int p = params.p();
  Rng rng = make_rng(seed, "sim");
  std::normal_distribution<double> normal(0.0, 1.0);

  const MatrixXd sq_pi0 = psd_sqrt(params.Pi0);
  const MatrixXd sq_q = psd_sqrt(params.Q);

  MatrixXd X(T, n);
  VectorXd z(n);
  for (int j = 0; j < n; ++j) z(j) = normal(rng);
  VectorXd x = sq_pi0 * z;
  X.row(0) = x.transpose();
  for (long t = 1; t < T; ++t) {
    for (int j = 0; j < n; ++j) z(j) = normal(rng);
    x = params.A * x + sq_q * z;
    X.row(t) = x.transpose();
  }

  MatrixXd Y = X * params.C.transpose();
  const VectorXd sd = params.R.cwiseSqrt();
  for (long t = 0; t < T; ++t)
    for (int i = 0; i < p; ++i) Y(t, i) += sd(i) * normal(rng);
  return {std::move(Y), std::move(X)};
}

}  // namespace stitch
