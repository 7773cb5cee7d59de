#ifndef STITCH_EVAL_HPP
#define STITCH_EVAL_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stitch/lds.hpp"
#include "stitch/observation.hpp"

namespace stitch {

struct EvalReport {
  double projection_error = 0.0;
  double largest_principal_angle_deg = 0.0;
  std::vector<double> prediction_correlation_per_lag;
  std::vector<double> pi0_spectrum;      // descending eigenvalues of Pi0
  std::vector<double> a_spectrum;        // descending eigenvalue moduli of A
  std::string method;
};

// e(C, Chat) = ||(I - Q Q^T) C||_F / ||C||_F with Q an orthonormal basis of
// the columns of Chat. Throws NumericalError when Chat is rank deficient.
double subspace_projection_error(const MatrixXd& C_true, const MatrixXd& C_hat);

double largest_principal_angle_deg(const MatrixXd& U, const MatrixXd& V);

// Pearson correlation between predicted Lambda(s) entries and ground-truth
// covariances over the given pair sample. Throws NumericalError on an empty
// sample (undefined metric).
double prediction_correlation(const MatrixXd& C_hat, const MatrixXd& Pi_s_hat,
                              const VectorXd& R_hat, int s,
                              const std::vector<std::pair<int, int>>& pair_sample,
                              const std::vector<double>& truth_values);

std::vector<double> truth_covariances(const LdsParams& truth, int s,
                                      const std::vector<std::pair<int, int>>& pairs);

struct SpectrumReport {
  std::vector<double> pi0_eigenvalues;   // descending
  std::vector<double> a_eigen_moduli;    // descending
  std::vector<double> pi0_ratios;        // lambda_{k+1} / lambda_k
  std::vector<double> a_ratios;
};

SpectrumReport spectrum_report(const MatrixXd& Pi0, const MatrixXd& A);

// Factor analysis by EM with diagonal noise on a fully observed block.
struct FaResult {
  MatrixXd loadings;   // q x n
  VectorXd noise;      // q
  std::vector<double> loglik_trace;
};

FaResult fa_em(const MatrixXd& data_block, int n, int iters,
               std::uint64_t seed);

// Chains per-session subspace estimates into the reference session's latent
// coordinates via least squares on overlap rows, averaging overlaps.
// Throws NumericalError naming the session pair when an overlap is rank
// deficient (alignment underdetermined).
MatrixXd posthoc_align(
    const std::vector<std::pair<std::vector<int>, MatrixXd>>& estimates, int p,
    int reference);

struct ObservabilityAlignment {
  int rank1 = 0;
  int rank2 = 0;
  bool full_rank = false;
  MatrixXd M;                  // valid when full_rank
  double eigenvalue_match_distance = 0.0;  // max pairing distance of eig(A1), eig(A2)
};

// O_J = [C_J; C_J A; ...; C_J A^{n-1}] per model; if both have rank n the
// base change M with O1 = O2 M^{-1} is recovered by least squares.
ObservabilityAlignment observability_alignment(const MatrixXd& A1,
                                               const MatrixXd& C1_overlap,
                                               const MatrixXd& A2,
                                               const MatrixXd& C2_overlap);

}  // namespace stitch

#endif
