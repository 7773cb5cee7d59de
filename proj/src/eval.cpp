#include "stitch/eval.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "stitch/errors.hpp"
#include "stitch/rng.hpp"

namespace stitch {

namespace {

// Orthonormal basis of the column space; throws on rank deficiency.
MatrixXd orthonormalize(const MatrixXd& M, const char* what) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
  const double thresh = 1e-10 * std::max(1.0, M.norm());
  if (qr.rank() < M.cols() ||
      std::abs(qr.matrixR()(M.cols() - 1, M.cols() - 1)) < thresh)
    throw NumericalError(std::string(what) + ": rank-deficient basis matrix");
  Eigen::HouseholderQR<MatrixXd> hqr(M);
  MatrixXd Q = hqr.householderQ() * MatrixXd::Identity(M.rows(), M.cols());
  return Q;
}

}  // namespace

double subspace_projection_error(const MatrixXd& C_true, const MatrixXd& C_hat) {
  if (C_true.rows() != C_hat.rows())
    throw ConfigError("subspace_projection_error: dimension mismatch");
  const MatrixXd Q = orthonormalize(C_hat, "subspace_projection_error");
  const MatrixXd resid = C_true - Q * (Q.transpose() * C_true);
  return resid.norm() / C_true.norm();
}

double largest_principal_angle_deg(const MatrixXd& U, const MatrixXd& V) {
  if (U.cols() == 0 || V.cols() == 0)
    throw ConfigError("largest_principal_angle: zero-dimensional subspace");
  const MatrixXd Qu = orthonormalize(U, "largest_principal_angle");
  const MatrixXd Qv = orthonormalize(V, "largest_principal_angle");
  Eigen::JacobiSVD<MatrixXd> svd(Qu.transpose() * Qv);
  const double c = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

std::vector<double> truth_covariances(const LdsParams& truth, int s,
                                      const std::vector<std::pair<int, int>>& pairs) {
  MatrixXd Pi_s = truth.Pi0;
  for (int k = 0; k < s; ++k) Pi_s = (truth.A * Pi_s).eval();
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& [i, j] : pairs)
    out.push_back(predicted_cov_entry(truth.C, Pi_s, truth.R, s, i, j));
  return out;
}

double prediction_correlation(const MatrixXd& C_hat, const MatrixXd& Pi_s_hat,
                              const VectorXd& R_hat, int s,
                              const std::vector<std::pair<int, int>>& pair_sample,
                              const std::vector<double>& truth_values) {
  if (pair_sample.empty())
    throw NumericalError("prediction_correlation: empty pair sample (undefined metric)");
  if (pair_sample.size() != truth_values.size())
    throw ConfigError("prediction_correlation: sample/truth size mismatch");
  const std::size_t m = pair_sample.size();
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const auto& [i, j] = pair_sample[k];
    const double x = predicted_cov_entry(C_hat, Pi_s_hat, R_hat, s, i, j);
    const double y = truth_values[k];
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double vx = sxx - sx * sx / m;
  const double vy = syy - sy * sy / m;
  if (vx <= 0.0 || vy <= 0.0)
    throw NumericalError("prediction_correlation: degenerate sample variance");
  return (sxy - sx * sy / m) / std::sqrt(vx * vy);
}

SpectrumReport spectrum_report(const MatrixXd& Pi0, const MatrixXd& A) {
  SpectrumReport rep;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (Pi0 + Pi0.transpose()));
  VectorXd ev = es.eigenvalues().reverse();
  for (int k = 0; k < ev.size(); ++k) rep.pi0_eigenvalues.push_back(ev(k));

  Eigen::VectorXcd ea = A.eigenvalues();
  std::vector<double> mods(ea.size());
  for (int k = 0; k < ea.size(); ++k) mods[k] = std::abs(ea(k));
  std::sort(mods.rbegin(), mods.rend());
  rep.a_eigen_moduli = mods;

  for (std::size_t k = 0; k + 1 < rep.pi0_eigenvalues.size(); ++k)
    rep.pi0_ratios.push_back(rep.pi0_eigenvalues[k] != 0.0
                                 ? rep.pi0_eigenvalues[k + 1] / rep.pi0_eigenvalues[k]
                                 : 0.0);
  for (std::size_t k = 0; k + 1 < rep.a_eigen_moduli.size(); ++k)
    rep.a_ratios.push_back(rep.a_eigen_moduli[k] != 0.0
                               ? rep.a_eigen_moduli[k + 1] / rep.a_eigen_moduli[k]
                               : 0.0);
  return rep;
}

FaResult fa_em(const MatrixXd& data_block, int n, int iters,
               std::uint64_t seed) {
  if (iters < 1) throw ConfigError("fa_em: iters must be >= 1");
  const long T = data_block.rows();
  const int q = static_cast<int>(data_block.cols());
  if (T < 2 || n < 1 || n > q) throw ConfigError("fa_em: bad dimensions");

  const Eigen::RowVectorXd mean = data_block.colwise().mean();
  const MatrixXd centered = data_block.rowwise() - mean;
  const MatrixXd S = centered.transpose() * centered / double(T);

  Rng rng = make_rng(seed, "fa");
  std::normal_distribution<double> normal(0.0, 1.0);
  FaResult res;
  res.loadings = MatrixXd(q, n);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < n; ++j)
      res.loadings(i, j) = normal(rng) / std::sqrt(double(n));
  res.noise = S.diagonal().cwiseMax(1e-8);

  const MatrixXd eye_n = MatrixXd::Identity(n, n);
  for (int it = 0; it < iters; ++it) {
    const MatrixXd& L = res.loadings;
    const VectorXd psi_inv = res.noise.cwiseInverse();
    const MatrixXd Lp = psi_inv.asDiagonal() * L;          // Psi^-1 L
    const MatrixXd G = (eye_n + L.transpose() * Lp).inverse();
    const MatrixXd delta = G * Lp.transpose();             // n x q
    const MatrixXd dS = delta * S;                          // n x q
    const MatrixXd Ezz = G + dS * delta.transpose();        // n x n

    // Log-likelihood of the current parameters (Gaussian, ML mean).
    // log|Sigma| via the determinant lemma, trace via Woodbury.
    double logdet = res.noise.array().log().sum() -
                    std::log(G.determinant());
    double tr = (psi_inv.asDiagonal() * S).trace() - (dS * Lp).trace();
    res.loglik_trace.push_back(-0.5 * T * (q * std::log(2.0 * M_PI) + logdet + tr));

    res.loadings = dS.transpose() * Ezz.inverse();
    res.noise = (S - res.loadings * dS).diagonal().cwiseMax(1e-12);
  }
  return res;
}

MatrixXd posthoc_align(
    const std::vector<std::pair<std::vector<int>, MatrixXd>>& estimates, int p,
    int reference) {
  if (estimates.empty()) throw ConfigError("posthoc_align: no session estimates");
  const int k = static_cast<int>(estimates.size());
  if (reference < 0 || reference >= k)
    throw ConfigError("posthoc_align: reference session out of range");
  const int n = static_cast<int>(estimates[0].second.cols());

  std::vector<MatrixXd> aligned(k);
  aligned[reference] = estimates[reference].second;

  auto align_pair = [&](int target, int anchor) {
    const auto& [idx_t, C_t] = estimates[target];
    const auto& idx_a = estimates[anchor].first;
    // Overlap rows between the two sessions.
    std::vector<int> rows_t, rows_a;
    for (std::size_t a = 0; a < idx_t.size(); ++a) {
      const auto it = std::find(idx_a.begin(), idx_a.end(), idx_t[a]);
      if (it != idx_a.end()) {
        rows_t.push_back(static_cast<int>(a));
        rows_a.push_back(static_cast<int>(it - idx_a.begin()));
      }
    }
    const int o = static_cast<int>(rows_t.size());
    MatrixXd Bt(o, n), Ba(o, n);
    for (int r = 0; r < o; ++r) {
      Bt.row(r) = C_t.row(rows_t[r]);
      Ba.row(r) = aligned[anchor].row(rows_a[r]);
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(Bt);
    if (o < n || qr.rank() < n)
      throw NumericalError(
          "posthoc_align: alignment underdetermined between sessions " +
          std::to_string(anchor + 1) + " and " + std::to_string(target + 1) +
          " (overlap rank " + std::to_string(std::min<int>(o, qr.rank())) +
          " < n)");
    const MatrixXd M = qr.solve(Ba);
    aligned[target] = C_t * M;
  };

  for (int s = reference + 1; s < k; ++s) align_pair(s, s - 1);
  for (int s = reference - 1; s >= 0; --s) align_pair(s, s + 1);

  MatrixXd C = MatrixXd::Zero(p, n);
  VectorXd hits = VectorXd::Zero(p);
  for (int s = 0; s < k; ++s) {
    const auto& idx = estimates[s].first;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      C.row(idx[r]) += aligned[s].row(r);
      hits(idx[r]) += 1.0;
    }
  }
  for (int i = 0; i < p; ++i) {
    if (hits(i) == 0.0)
      throw ConfigError("posthoc_align: variable " + std::to_string(i + 1) +
                        " not covered by any session");
    C.row(i) /= hits(i);
  }
  return C;
}

ObservabilityAlignment observability_alignment(const MatrixXd& A1,
                                               const MatrixXd& C1_overlap,
                                               const MatrixXd& A2,
                                               const MatrixXd& C2_overlap) {
  const int n = static_cast<int>(A1.rows());
  const long o = C1_overlap.rows();
  auto build = [&](const MatrixXd& C, const MatrixXd& A) {
    MatrixXd O(o * n, n);
    MatrixXd CAk = C;
    for (int k = 0; k < n; ++k) {
      O.middleRows(k * o, o) = CAk;
      CAk = (CAk * A).eval();
    }
    return O;
  };

  ObservabilityAlignment res;
  const MatrixXd O1 = build(C1_overlap, A1);
  const MatrixXd O2 = build(C2_overlap, A2);
  auto rank_of = [](const MatrixXd& M) {
    if (M.rows() == 0) return 0;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
    qr.setThreshold(1e-9);
    return static_cast<int>(qr.rank());
  };
  res.rank1 = rank_of(O1);
  res.rank2 = rank_of(O2);
  res.full_rank = (res.rank1 == n && res.rank2 == n);
  if (res.full_rank) {
    // O1 = O2 M^{-1}
    const MatrixXd Minv = O2.colPivHouseholderQr().solve(O1);
    res.M = Minv.partialPivLu().inverse();
  }

  // Greedy eigenvalue pairing distance between the two dynamics matrices.
  Eigen::VectorXcd e1 = A1.eigenvalues(), e2 = A2.eigenvalues();
  std::vector<bool> used(e2.size(), false);
  double worst = 0.0;
  for (int a = 0; a < e1.size(); ++a) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int b = 0; b < e2.size(); ++b) {
      if (used[b]) continue;
      const double d = std::abs(e1(a) - e2(b));
      if (d < best) {
        best = d;
        arg = b;
      }
    }
    if (arg >= 0) used[arg] = true;
    worst = std::max(worst, best);
  }
  res.eigenvalue_match_distance = worst;
  return res;
}

}  // namespace stitch
