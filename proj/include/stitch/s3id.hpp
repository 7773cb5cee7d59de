#ifndef STITCH_S3ID_HPP
#define STITCH_S3ID_HPP

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "stitch/lds.hpp"
#include "stitch/observation.hpp"

namespace stitch {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class LatentMode { kLinear, kNonlinear };

struct S3idConfig {
  int n = 0;
  int max_lag = 1;                 // S
  std::vector<double> lag_weights; // r_s; empty means all ones
  int batch_size = 20;
  AdamConfig adam;
  int passes = 1;
  LatentMode mode = LatentMode::kLinear;
  int monitor_pairs = 10000;       // per lag
  int monitor_every = 100;         // steps between monitoring-loss evaluations
  // Pairs with co-occurrence count below this never enter the loss: their
  // inverse-count weight makes a near-unestimable target (e.g. the few
  // samples straddling a segment boundary) as influential as a pair observed
  // for half the recording.
  long min_pair_count = 10;
  std::uint64_t seed = 0;

  std::vector<double> effective_lag_weights() const;
};

// Optimizer state: parameters plus ADAM moment accumulators.
struct S3idState {
  LatentMode mode = LatentMode::kLinear;
  int S = 0;
  MatrixXd C;
  VectorXd R;
  MatrixXd A, Pi0;              // linear mode
  std::vector<MatrixXd> Pis;    // nonlinear mode, lags 0..S

  MatrixXd mC, vC;
  VectorXd mR, vR;
  MatrixXd mA, vA, mPi0, vPi0;
  std::vector<MatrixXd> mPis, vPis;
  long step = 0;

  // Pi_s for the current parameters (A^s Pi0 in linear mode).
  MatrixXd latent_cov(int s) const;
};

struct S3idGradients {
  MatrixXd C;
  VectorXd R;
  std::vector<MatrixXd> Pi;        // dL/dPi_s, lags 0..S
  std::optional<MatrixXd> A, Pi0;  // filled by grad_linear_mode
};

S3idState init_state(const MaskedTimeSeries& data,
                     const CooccurrenceGroups& groups, const S3idConfig& cfg);

// Held-out target covariances used for monitoring the loss during fitting.
struct MomentTargets {
  std::vector<PairSet> pairs;               // per lag 0..S
  std::vector<std::vector<double>> values;  // empirical estimates per pair
};

MomentTargets make_monitor_targets(const MaskedTimeSeries& data,
                                   const CooccurrenceGroups& groups,
                                   const S3idConfig& cfg);

double s3id_loss(const S3idState& state, const MomentTargets& targets,
                 const std::vector<double>& lag_weights);

// Mean over the batch of per-(t, s) stochastic gradients of the
// moment-matching loss, each scaled by its lag weight. Pair weights are the
// inverse co-occurrence counts; pairs co-observed fewer than min_count times
// contribute nothing.
S3idGradients grad_batch(const S3idState& state, const MaskedTimeSeries& data,
                         const CooccurrenceGroups& groups,
                         const std::vector<std::pair<long, int>>& batch,
                         const std::vector<double>& lag_weights,
                         long min_count = 2);

// Chain rule through Pi_s = A^s Pi0; the Pi0 gradient is symmetrized.
std::pair<MatrixXd, MatrixXd> grad_linear_mode(
    const S3idState& state, const std::vector<MatrixXd>& pi_gradients);

// One ADAM update. Clamps R at zero and re-symmetrizes Pi0 afterwards.
// Throws NumericalError on non-finite gradients.
void adam_step(S3idState& state, const S3idGradients& grads,
               const AdamConfig& cfg);

struct LossTracePoint {
  long step = 0;
  double monitor_loss = 0.0;
  double wall_time_s = 0.0;
};

struct S3idFit {
  S3idState state;
  LdsParams params;        // linear mode export (Q = Pi0 - A Pi0 A^T, PSD-clamped)
  LatentMoments moments;   // nonlinear mode export
  std::vector<LossTracePoint> trace;
};

S3idFit fit_s3id(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
                 const S3idConfig& cfg);

// Classical stochastic subspace identification on fully observed covariances:
// SVD of the block Hankel matrix with blocks H_{k,l} = cov(k + l - 1).
struct HankelSsidResult {
  LdsParams params;
  VectorXd singular_values;
  bool rank_deficient = false;
};

// lagged_covs holds {Lambda(0), ..., Lambda(K+L-1)}; Lambda(0) is used for
// the R / Pi0 split only.
HankelSsidResult hankel_ssid(const std::vector<MatrixXd>& lagged_covs, int n,
                             int K, int L);

// Deterministic full-gradient fit of the moment-matching loss against given
// dense target covariances (all pairs observed). Used as a small-scale
// reference path next to hankel_ssid.
S3idState fit_s3id_to_covs(const std::vector<MatrixXd>& targets, int n,
                           const AdamConfig& adam, long iters,
                           std::uint64_t seed, LatentMode mode = LatentMode::kLinear);

}  // namespace stitch

#endif
