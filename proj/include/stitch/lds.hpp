#ifndef STITCH_LDS_HPP
#define STITCH_LDS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace stitch {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Full parameter set of a latent linear dynamical system
//   x_{t+1} = A x_t + eta_t,  eta ~ N(0, Q)
//   y_t     = C x_t + eps_t,  eps ~ N(0, diag(R))
// Pi0 is the covariance of the initial (stationary) latent state.
struct LdsParams {
  MatrixXd A;    // n x n
  MatrixXd C;    // p x n
  MatrixXd Q;    // n x n
  VectorXd R;    // p, diagonal observation noise variances
  MatrixXd Pi0;  // n x n

  int n() const { return static_cast<int>(A.rows()); }
  int p() const { return static_cast<int>(C.rows()); }
};

// Throws ConfigError if any structural invariant is violated
// (stability, symmetry, PSD-ness, nonnegative R).
void validate_lds(const LdsParams& params);

double spectral_radius(const MatrixXd& A);

// Lagged latent covariances Pi_s = Cov[x_{t+s}, x_t], s = 0..S.
struct LatentMoments {
  std::vector<MatrixXd> lags;

  int max_lag() const { return static_cast<int>(lags.size()) - 1; }
};

LatentMoments linear_latent_moments(const LdsParams& params, int max_lag);

struct SimConfig {
  int p = 0;
  int n = 0;
  long T = 0;
  double eig_modulus_lo = 0.9;
  double eig_modulus_hi = 0.99;
  double vonmises_kappa = 1000.0;
  double private_noise_fraction = 0.5;
  std::uint64_t seed = 0;
};

// Stationary covariance of x: solves Pi = A Pi A^T + Q by doubling
// iteration. Throws NumericalError if the iteration does not reach
// residual 1e-10 * max(1, ||Q||_F) within 200 steps.
MatrixXd solve_stationary_covariance(const MatrixXd& A, const MatrixXd& Q);

// Random stable LDS with eigenvalue moduli spanning the configured interval
// and rotation angles drawn von Mises around zero. Deterministic per seed.
LdsParams generate_random_lds(const SimConfig& cfg);

// Lambda(s) = C Pi_s C^T + delta_{s=0} diag(R) for one entry / a sub-block /
// the full matrix. Full materialization is refused above p = 20000.
double predicted_cov_entry(const MatrixXd& C, const MatrixXd& Pi_s,
                           const VectorXd& R, int s, int i, int j);
MatrixXd predicted_lagged_cov_block(const MatrixXd& C, const MatrixXd& Pi_s,
                                    const VectorXd& R, int s,
                                    const std::vector<int>& rows,
                                    const std::vector<int>& cols);
MatrixXd predicted_lagged_cov(const LdsParams& params, int s);
MatrixXd predicted_lagged_cov(const MatrixXd& C, const LatentMoments& moments,
                              const VectorXd& R, int s);

// Draws a trajectory; returns (Y: T x p, X: T x n). x_1 ~ N(0, Pi0).
std::pair<MatrixXd, MatrixXd> simulate(const LdsParams& params, long T,
                                       std::uint64_t seed);

// Symmetrize and clamp eigenvalues at zero.
MatrixXd clamp_psd(const MatrixXd& M);

}  // namespace stitch

#endif
