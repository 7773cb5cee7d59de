#ifndef STITCH_SEM_HPP
#define STITCH_SEM_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "stitch/lds.hpp"
#include "stitch/observation.hpp"

namespace stitch {

struct SemConfig {
  int n = 0;
  int max_iters = 200;
  double loglik_rel_tol = 1e-8;
  double cov_converge_tol = 1e-9;  // Frobenius change for covariance freezing
  int restarts = 4;
  std::uint64_t seed = 0;
};

struct FilterResult {
  MatrixXd filt_means;   // T x n
  MatrixXd pred_means;   // T x n
  std::vector<MatrixXd> filt_covs;
  std::vector<MatrixXd> pred_covs;
  double loglik = 0.0;
};

struct SmoothedPosterior {
  MatrixXd means;                  // T x n
  std::vector<MatrixXd> covs;      // Cov[x_t | Y]
  std::vector<MatrixXd> lag_one;   // lag_one[t] = Cov[x_{t+1}, x_t | Y], t < T-1
};

// Kalman filter restricted to observed rows per time point. params.Pi0 acts
// as the covariance of the initial latent state. Within a segment the
// covariance recursion is frozen once its Frobenius change drops below
// cov_converge_tol; recursions restart at segment boundaries. offset, when
// given, is a per-variable additive offset subtracted from y (the nuisance
// parameter implied by the centered C update).
FilterResult kalman_filter_subset(const LdsParams& params,
                                  const MaskedTimeSeries& data,
                                  double cov_converge_tol = 1e-9,
                                  const VectorXd* offset = nullptr);

SmoothedPosterior kalman_smooth(const LdsParams& params,
                                const FilterResult& filtered);

// Closed-form M-step. The C update runs per co-occurrence group with a
// shared inverse factor; A and Q are unaffected by the observation scheme.
// The returned Pi0 slot holds the updated initial-state covariance. The
// centered C update jointly maximizes over a per-variable offset; the
// offset estimate is written to offset_out when given (monotone EM requires
// carrying it into the next E-step).
LdsParams m_step(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
                 const SmoothedPosterior& posterior,
                 VectorXd* offset_out = nullptr);

struct SemFit {
  LdsParams params;
  std::vector<double> loglik_trace;
};

// EM loop. With an init parameter set, runs a single fit from it; otherwise
// runs cfg.restarts random initializations and keeps the best final
// log-likelihood. The exported Pi0 is the stationary covariance of (A, Q)
// when A is stable.
SemFit fit_sem(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
               const SemConfig& cfg,
               const std::optional<LdsParams>& init = std::nullopt);

}  // namespace stitch

#endif
