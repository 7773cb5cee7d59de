#include "stitch/s3id.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "stitch/errors.hpp"
#include "stitch/eval.hpp"

namespace stitch {

std::vector<double> S3idConfig::effective_lag_weights() const {
  if (lag_weights.empty()) return std::vector<double>(max_lag + 1, 1.0);
  if (static_cast<int>(lag_weights.size()) != max_lag + 1)
    throw ConfigError("s3id: lag_weights must have S + 1 entries");
  for (double w : lag_weights)
    if (w < 0.0) throw ConfigError("s3id: lag weights must be nonnegative");
  return lag_weights;
}

MatrixXd S3idState::latent_cov(int s) const {
  if (mode == LatentMode::kNonlinear) {
    if (s < 0 || s > S) throw ConfigError("s3id: lag beyond stored moments");
    return Pis[s];
  }
  MatrixXd out = Pi0;
  for (int k = 0; k < s; ++k) out = (A * out).eval();
  return out;
}

namespace {

// Leading eigenpairs of a symmetric matrix by seeded subspace iteration
// (avoids a full O(p^3) decomposition at large p).
std::pair<MatrixXd, VectorXd> top_eigenpairs(const MatrixXd& W, int n,
                                             std::uint64_t seed) {
  const int p = static_cast<int>(W.rows());
  Rng rng = make_rng(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd V(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) V(i, j) = normal(rng);
  for (int it = 0; it < 30; ++it) {
    const MatrixXd WV = W * V;
    Eigen::HouseholderQR<MatrixXd> qr(WV);
    V = qr.householderQ() * MatrixXd::Identity(p, n);
  }
  const MatrixXd small = V.transpose() * W * V;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (small + small.transpose()));
  const VectorXd ev = es.eigenvalues().reverse();
  MatrixXd U = V * es.eigenvectors().rowwise().reverse();
  return {std::move(U), ev};
}

// Per-segment PCA loadings chained through the overlaps. Segment-local
// principal directions carry every latent dimension with its real energy;
// aligning them on the shared variables yields a full-rank global loading
// matrix, unlike PCA on the zero-filled global covariance (which duplicates
// strong directions across segments). Returns an empty matrix when a
// segment is too small or an overlap leaves the alignment underdetermined.
MatrixXd stitched_pca_init(const MaskedTimeSeries& data, int n,
                           std::uint64_t seed) {
  const auto& segments = data.scheme.segments();
  std::vector<std::pair<std::vector<int>, MatrixXd>> estimates;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    const long len = seg.t_end - seg.t_begin;
    const std::vector<int>& idx =
        data.scheme.observed_indices(static_cast<int>(s));
    const int q = static_cast<int>(idx.size());
    if (q < n || len < 2) return MatrixXd();
    MatrixXd block(len, q);
    for (int c = 0; c < q; ++c)
      block.col(c) = data.Y.col(idx[c]).segment(seg.t_begin, len).array() -
                     data.per_variable_mean(idx[c]);
    const MatrixXd W = block.transpose() * block / static_cast<double>(len);
    const auto [U, ev] = top_eigenpairs(W, n, seed + s);
    MatrixXd L(q, n);
    for (int j = 0; j < n; ++j)
      L.col(j) = U.col(j) * std::sqrt(0.5 * std::max(ev(j), 1e-8));
    estimates.emplace_back(idx, std::move(L));
  }
  try {
    return posthoc_align(estimates, data.scheme.p(), 0);
  } catch (const NumericalError&) {
    return MatrixXd();  // overlap rank below n; caller falls back
  }
}

}  // namespace

S3idState init_state(const MaskedTimeSeries& data,
                     const CooccurrenceGroups& groups, const S3idConfig& cfg) {
  (void)groups;
  const int p = data.scheme.p();
  const long T = data.scheme.T();
  if (p <= 0 || T <= 0 || data.Y.size() == 0)
    throw ConfigError("s3id: empty data");
  if (cfg.n <= 0 || cfg.n > p) throw ConfigError("s3id: requires 0 < n <= p");
  if (cfg.max_lag < 1) throw ConfigError("s3id: max lag S must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("s3id: batch size must be >= 1");

  S3idState st;
  st.mode = cfg.mode;
  st.S = cfg.max_lag;
  const int n = cfg.n;

  // Spectral initialization seeds every latent dimension with roughly the
  // right energy; random loadings are the fallback when the observation
  // scheme leaves the per-segment alignment underdetermined.
  st.C = stitched_pca_init(data, n, cfg.seed);
  if (st.C.size() == 0) {
    Rng rng = make_rng(cfg.seed, "init");
    std::normal_distribution<double> normal(0.0, 1.0);
    st.C = MatrixXd(p, n);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < n; ++j)
        st.C(i, j) = normal(rng) / std::sqrt(double(n));
  }
  st.R = 0.5 * data.observed_variance;

  st.A = 0.9 * MatrixXd::Identity(n, n);
  st.Pi0 = MatrixXd::Identity(n, n);
  if (cfg.mode == LatentMode::kNonlinear) {
    st.Pis.resize(st.S + 1);
    for (int s = 0; s <= st.S; ++s)
      st.Pis[s] = std::pow(0.9, s) * MatrixXd::Identity(n, n);
    st.mPis.assign(st.S + 1, MatrixXd::Zero(n, n));
    st.vPis.assign(st.S + 1, MatrixXd::Zero(n, n));
  }

  st.mC = MatrixXd::Zero(p, n);
  st.vC = MatrixXd::Zero(p, n);
  st.mR = VectorXd::Zero(p);
  st.vR = VectorXd::Zero(p);
  st.mA = MatrixXd::Zero(n, n);
  st.vA = MatrixXd::Zero(n, n);
  st.mPi0 = MatrixXd::Zero(n, n);
  st.vPi0 = MatrixXd::Zero(n, n);
  return st;
}

MomentTargets make_monitor_targets(const MaskedTimeSeries& data,
                                   const CooccurrenceGroups& groups,
                                   const S3idConfig& cfg) {
  MomentTargets targets;
  Rng rng = make_rng(cfg.seed, "monitor");
  const long min_count = std::max<long>(cfg.min_pair_count, 2);
  for (int s = 0; s <= cfg.max_lag; ++s) {
    PairSet ps = sample_co_observed_pairs(groups, data.scheme.p(), s,
                                          cfg.monitor_pairs, rng);
    // Drop pairs below the count threshold; they are excluded from the loss.
    PairSet kept;
    kept.lag = ps.lag;
    for (const auto& pr : ps.pairs)
      if (groups.pair_count(pr.first, pr.second, s) >= min_count)
        kept.pairs.push_back(pr);
    targets.values.push_back(empirical_lagged_cov(data, s, kept, groups));
    targets.pairs.push_back(std::move(kept));
  }
  return targets;
}

double s3id_loss(const S3idState& state, const MomentTargets& targets,
                 const std::vector<double>& lag_weights) {
  double loss = 0.0;
  for (std::size_t s = 0; s < targets.pairs.size(); ++s) {
    if (lag_weights[s] == 0.0) continue;
    const MatrixXd Pi_s = state.latent_cov(static_cast<int>(s));
    double acc = 0.0;
    const auto& pairs = targets.pairs[s].pairs;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const double pred =
          predicted_cov_entry(state.C, Pi_s, state.R, static_cast<int>(s),
                              pairs[k].first, pairs[k].second);
      const double d = pred - targets.values[s][k];
      acc += d * d;
    }
    loss += 0.5 * lag_weights[s] * acc;
  }
  return loss;
}

S3idGradients grad_batch(const S3idState& state, const MaskedTimeSeries& data,
                         const CooccurrenceGroups& groups,
                         const std::vector<std::pair<long, int>>& batch,
                         const std::vector<double>& lag_weights,
                         long min_count) {
  const int p = static_cast<int>(state.C.rows());
  const int n = static_cast<int>(state.C.cols());
  const int S = state.S;
  const long T = data.scheme.T();
  const int G = groups.group_count();

  S3idGradients grads;
  grads.C = MatrixXd::Zero(p, n);
  grads.R = VectorXd::Zero(p);
  grads.Pi.assign(S + 1, MatrixXd::Zero(n, n));
  if (batch.empty()) return grads;

  std::vector<MatrixXd> Pis(S + 1);
  for (int s = 0; s <= S; ++s) Pis[s] = state.latent_cov(s);

  bool has_lag0 = false;
  for (const auto& [t, s] : batch) {
    if (t < 0 || s < 0 || s > S || t + s >= T)
      throw ConfigError("s3id: batch sample (t, s) out of range");
    if (s == 0) has_lag0 = true;
  }

  // Per-group precomputations shared across the batch (C and R are fixed
  // within a step).
  std::vector<MatrixXd> M(G);
  std::vector<MatrixXd> D(G);
  for (int g = 0; g < G; ++g) {
    const auto& idx = groups.members(g);
    MatrixXd Mg = MatrixXd::Zero(n, n);
    for (int i : idx)
      Mg.noalias() += state.C.row(i).transpose() * state.C.row(i);
    M[g] = std::move(Mg);
    if (has_lag0) {
      MatrixXd Dg = MatrixXd::Zero(n, n);
      for (int i : idx)
        Dg.noalias() += state.R(i) * state.C.row(i).transpose() * state.C.row(i);
      D[g] = std::move(Dg);
    }
  }
  VectorXd q;  // diag of C Pi0 C^T, needed for the R gradient at lag 0
  if (has_lag0)
    q = ((state.C * Pis[0]).cwiseProduct(state.C)).rowwise().sum();

  std::vector<MatrixXd> Xacc(G, MatrixXd::Zero(n, n));
  std::vector<double> c0(G, 0.0);
  std::vector<VectorXd> sb(G), sa(G);
  std::vector<double> wrow(G);

  for (const auto& [t, s] : batch) {
    const double r = lag_weights[s];
    if (r == 0.0) continue;
    const MatrixXd& Pi_s = Pis[s];
    const int seg_t = data.scheme.segment_index(t);
    const int seg_ts = data.scheme.segment_index(t + s);
    const auto& gl_t = groups.groups_in_segment(seg_t);
    const auto& gl_ts = groups.groups_in_segment(seg_ts);

    // Latent projections of the two centered data slices.
    for (int b : gl_t) {
      VectorXd v = VectorXd::Zero(n);
      for (int i : groups.members(b))
        v.noalias() += (data.Y(t, i) - data.per_variable_mean(i)) *
                       state.C.row(i).transpose();
      sb[b] = std::move(v);
    }
    for (int a : gl_ts) {
      VectorXd v = VectorXd::Zero(n);
      for (int i : groups.members(a))
        v.noalias() += (data.Y(t + s, i) - data.per_variable_mean(i)) *
                       state.C.row(i).transpose();
      sa[a] = std::move(v);
    }

    MatrixXd piacc = MatrixXd::Zero(n, n);
    for (int a : gl_ts) {
      MatrixXd Ka = MatrixXd::Zero(n, n);
      VectorXd ua = VectorXd::Zero(n);
      for (int b : gl_t) {
        const long cnt = groups.count(a, b, s);
        if (cnt < min_count) continue;
        const double w = 1.0 / static_cast<double>(cnt);
        Ka.noalias() += w * M[b];
        ua.noalias() += w * sb[b];
      }
      const MatrixXd PiKa = Pi_s * Ka;
      Xacc[a].noalias() += r * PiKa * Pi_s.transpose();
      piacc.noalias() += M[a] * PiKa;
      piacc.noalias() -= sa[a] * ua.transpose();
      const VectorXd w1 = Pi_s * ua;
      for (int i : groups.members(a))
        grads.C.row(i).noalias() -=
            r * (data.Y(t + s, i) - data.per_variable_mean(i)) * w1.transpose();
    }
    grads.Pi[s].noalias() += r * piacc;

    for (int b : gl_t) {
      MatrixXd Kb = MatrixXd::Zero(n, n);
      VectorXd vb = VectorXd::Zero(n);
      for (int a : gl_ts) {
        const long cnt = groups.count(a, b, s);
        if (cnt < min_count) continue;
        const double w = 1.0 / static_cast<double>(cnt);
        Kb.noalias() += w * M[a];
        vb.noalias() += w * sa[a];
      }
      Xacc[b].noalias() += r * Pi_s.transpose() * Kb * Pi_s;
      const VectorXd w2 = Pi_s.transpose() * vb;
      for (int i : groups.members(b))
        grads.C.row(i).noalias() -=
            r * (data.Y(t, i) - data.per_variable_mean(i)) * w2.transpose();
    }

    if (s == 0) {
      for (int a : gl_t) {
        const long cnt = groups.count(a, a, 0);
        if (cnt < min_count) continue;
        const double w = 1.0 / static_cast<double>(cnt);
        grads.Pi[0].noalias() += r * w * D[a];
        c0[a] += r * w;
        for (int i : groups.members(a)) {
          const double yc = data.Y(t, i) - data.per_variable_mean(i);
          grads.R(i) += r * w * (q(i) + state.R(i) - yc * yc);
        }
      }
    }
  }

  // Deferred per-group matrix contributions to the C gradient.
  for (int g = 0; g < G; ++g) {
    if (Xacc[g].isZero(0.0) && c0[g] == 0.0) continue;
    MatrixXd Xg = Xacc[g];
    if (c0[g] != 0.0) {
      // Diagonal R contribution to Lambda(0) entries (i, i).
      const MatrixXd corr = c0[g] * (Pis[0] + Pis[0].transpose());
      for (int i : groups.members(g))
        grads.C.row(i).noalias() += state.R(i) * state.C.row(i) * corr;
    }
    for (int i : groups.members(g))
      grads.C.row(i).noalias() += state.C.row(i) * Xg;
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  grads.C *= inv_b;
  grads.R *= inv_b;
  for (auto& g : grads.Pi) g *= inv_b;
  return grads;
}

std::pair<MatrixXd, MatrixXd> grad_linear_mode(
    const S3idState& state, const std::vector<MatrixXd>& pi_gradients) {
  const int n = static_cast<int>(state.A.rows());
  const int S = static_cast<int>(pi_gradients.size()) - 1;
  std::vector<MatrixXd> Apow(S + 1);
  Apow[0] = MatrixXd::Identity(n, n);
  for (int k = 1; k <= S; ++k) Apow[k] = state.A * Apow[k - 1];

  MatrixXd gA = MatrixXd::Zero(n, n);
  MatrixXd gPi0 = MatrixXd::Zero(n, n);
  for (int s = 0; s <= S; ++s) {
    const MatrixXd& Gs = pi_gradients[s];
    gPi0.noalias() += Apow[s].transpose() * Gs;
    for (int k = 0; k < s; ++k)
      gA.noalias() += Apow[k].transpose() * Gs *
                      (Apow[s - 1 - k] * state.Pi0).transpose();
  }
  gPi0 = 0.5 * (gPi0 + gPi0.transpose()).eval();
  return {std::move(gA), std::move(gPi0)};
}

namespace {

template <typename Param>
void adam_update(Param& x, Param& m, Param& v, const Param& g,
                 const AdamConfig& cfg, double bc1, double bc2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v.array().matrix() + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  x -= (cfg.step_size * (m / bc1).array() /
        ((v / bc2).array().sqrt() + cfg.epsilon))
           .matrix();
}

}  // namespace

void adam_step(S3idState& state, const S3idGradients& grads,
               const AdamConfig& cfg) {
  auto check = [](const auto& g) {
    if (!g.allFinite())
      throw NumericalError("adam_step: non-finite gradient encountered");
  };
  check(grads.C);
  check(grads.R);
  if (state.mode == LatentMode::kLinear) {
    if (!grads.A || !grads.Pi0)
      throw ConfigError("adam_step: linear mode requires A and Pi0 gradients");
    check(*grads.A);
    check(*grads.Pi0);
  } else {
    for (const auto& g : grads.Pi) check(g);
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));

  adam_update(state.C, state.mC, state.vC, grads.C, cfg, bc1, bc2);
  adam_update(state.R, state.mR, state.vR, grads.R, cfg, bc1, bc2);
  if (state.mode == LatentMode::kLinear) {
    adam_update(state.A, state.mA, state.vA, *grads.A, cfg, bc1, bc2);
    adam_update(state.Pi0, state.mPi0, state.vPi0, *grads.Pi0, cfg, bc1, bc2);
    state.Pi0 = (0.5 * (state.Pi0 + state.Pi0.transpose())).eval();
  } else {
    for (int s = 0; s <= state.S; ++s)
      adam_update(state.Pis[s], state.mPis[s], state.vPis[s], grads.Pi[s], cfg,
                  bc1, bc2);
    state.Pis[0] = (0.5 * (state.Pis[0] + state.Pis[0].transpose())).eval();
  }
  state.R = state.R.cwiseMax(0.0);
}

S3idFit fit_s3id(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
                 const S3idConfig& cfg) {
  const long T = data.scheme.T();
  const int S = cfg.max_lag;
  const std::vector<double> weights = cfg.effective_lag_weights();

  S3idFit fit;
  fit.state = init_state(data, groups, cfg);
  MomentTargets targets = make_monitor_targets(data, groups, cfg);

  // Uniform sampling over valid (t, s) with t + s <= T.
  std::vector<long> cum(S + 2, 0);
  for (int s = 0; s <= S; ++s) cum[s + 1] = cum[s] + (T - s);
  const long total = cum[S + 1];
  Rng rng = make_rng(cfg.seed, "batch");
  std::uniform_int_distribution<long> pick(0, total - 1);

  const long steps =
      cfg.passes * ((T * (S + 1) + cfg.batch_size - 1) / cfg.batch_size);
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         t_start)
        .count();
  };
  auto record = [&](long step) {
    const double loss = s3id_loss(fit.state, targets, weights);
    if (!std::isfinite(loss))
      throw NumericalError("fit_s3id: non-finite monitoring loss");
    fit.trace.push_back({step, loss, elapsed()});
  };
  record(0);

  std::vector<std::pair<long, int>> batch(cfg.batch_size);
  for (long step = 1; step <= steps; ++step) {
    for (int b = 0; b < cfg.batch_size; ++b) {
      const long u = pick(rng);
      int s = 0;
      while (u >= cum[s + 1]) ++s;
      batch[b] = {u - cum[s], s};
    }
    S3idGradients grads = grad_batch(fit.state, data, groups, batch, weights,
                                     std::max<long>(cfg.min_pair_count, 2));
    if (cfg.mode == LatentMode::kLinear) {
      auto [gA, gPi0] = grad_linear_mode(fit.state, grads.Pi);
      grads.A = std::move(gA);
      grads.Pi0 = std::move(gPi0);
    }
    adam_step(fit.state, grads, cfg.adam);
    if (step % cfg.monitor_every == 0 || step == steps) record(step);
  }

  // Export in the orthonormal-loading basis: the loss is invariant under
  // (C, Pi_s) -> (C M, M^-1 Pi_s M^-T), so the raw Pi0 spectrum is
  // meaningless. Rotating the column scale into the latent covariances makes
  // it comparable across fits (and usable as a dimensionality diagnostic).
  const int n = cfg.n;
  Eigen::HouseholderQR<MatrixXd> qr(fit.state.C);
  const MatrixXd Qc =
      qr.householderQ() * MatrixXd::Identity(fit.state.C.rows(), n);
  const MatrixXd Rc = Qc.transpose() * fit.state.C;
  const bool invertible =
      std::abs(Rc.diagonal().minCoeff()) > 1e-12 * Rc.norm();
  fit.params.C = invertible ? Qc : fit.state.C;
  fit.params.R = fit.state.R;
  if (cfg.mode == LatentMode::kLinear) {
    if (invertible) {
      const MatrixXd Rc_inv = Rc.inverse();
      fit.params.A = Rc * fit.state.A * Rc_inv;
      fit.params.Pi0 = clamp_psd(Rc * fit.state.Pi0 * Rc.transpose());
    } else {
      fit.params.A = fit.state.A;
      fit.params.Pi0 = clamp_psd(fit.state.Pi0);
    }
    fit.params.Q = clamp_psd(fit.params.Pi0 -
                             fit.params.A * fit.params.Pi0 *
                                 fit.params.A.transpose());
  } else {
    fit.moments.lags = fit.state.Pis;
    if (invertible)
      for (MatrixXd& Pi : fit.moments.lags)
        Pi = (Rc * Pi * Rc.transpose()).eval();
    fit.moments.lags[0] = clamp_psd(fit.moments.lags[0]);
    fit.params.A = MatrixXd::Zero(n, n);
    fit.params.Pi0 = fit.moments.lags[0];
    fit.params.Q = fit.params.Pi0;
  }
  return fit;
}

HankelSsidResult hankel_ssid(const std::vector<MatrixXd>& lagged_covs, int n,
                             int K, int L) {
  if (K < 1 || L < 1 || n < 1) throw ConfigError("hankel_ssid: bad K, L or n");
  if (static_cast<int>(lagged_covs.size()) < K + L)
    throw ConfigError("hankel_ssid: needs lags 0..K+L-1");
  const int p = static_cast<int>(lagged_covs[0].rows());

  MatrixXd H(p * K, p * L);
  for (int k = 0; k < K; ++k)
    for (int l = 0; l < L; ++l)
      H.block(k * p, l * p, p, p) = lagged_covs[k + l + 1];

  Eigen::BDCSVD<MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
  HankelSsidResult res;
  res.singular_values = svd.singularValues();
  if (res.singular_values.size() < n || res.singular_values(n - 1) <= 0.0 ||
      res.singular_values(n - 1) < 1e-10 * res.singular_values(0))
    res.rank_deficient = true;

  const VectorXd sq = res.singular_values.head(n).cwiseSqrt();
  const MatrixXd O = svd.matrixU().leftCols(n) * sq.asDiagonal();
  const MatrixXd Kf = sq.asDiagonal() * svd.matrixV().leftCols(n).transpose();

  LdsParams& pr = res.params;
  pr.C = O.topRows(p);
  if (K > 1) {
    const MatrixXd O_up = O.topRows(p * (K - 1));
    const MatrixXd O_down = O.bottomRows(p * (K - 1));
    pr.A = O_up.colPivHouseholderQr().solve(O_down);
  } else {
    pr.A = MatrixXd::Identity(n, n);
  }
  // First block column of the controllability factor is A Pi0 C^T.
  const MatrixXd G = Kf.leftCols(p);
  const MatrixXd X = pr.A.partialPivLu().solve(G);  // Pi0 C^T
  MatrixXd Pi0t = pr.C.colPivHouseholderQr().solve(X.transpose());
  pr.Pi0 = 0.5 * (Pi0t + Pi0t.transpose());
  pr.R = (lagged_covs[0] - pr.C * pr.Pi0 * pr.C.transpose())
             .diagonal()
             .cwiseMax(0.0);
  pr.Q = clamp_psd(pr.Pi0 - pr.A * pr.Pi0 * pr.A.transpose());
  return res;
}

S3idState fit_s3id_to_covs(const std::vector<MatrixXd>& targets, int n,
                           const AdamConfig& adam, long iters,
                           std::uint64_t seed, LatentMode mode) {
  if (targets.empty()) throw ConfigError("fit_s3id_to_covs: no targets");
  const int p = static_cast<int>(targets[0].rows());
  const int S = static_cast<int>(targets.size()) - 1;

  S3idState st;
  st.mode = mode;
  st.S = S;
  Rng rng = make_rng(seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  st.C = MatrixXd(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) st.C(i, j) = normal(rng) / std::sqrt(double(n));
  st.R = 0.5 * targets[0].diagonal();
  st.A = 0.9 * MatrixXd::Identity(n, n);
  st.Pi0 = MatrixXd::Identity(n, n);
  if (mode == LatentMode::kNonlinear) {
    st.Pis.resize(S + 1);
    for (int s = 0; s <= S; ++s)
      st.Pis[s] = std::pow(0.9, s) * MatrixXd::Identity(n, n);
    st.mPis.assign(S + 1, MatrixXd::Zero(n, n));
    st.vPis.assign(S + 1, MatrixXd::Zero(n, n));
  }
  st.mC = MatrixXd::Zero(p, n);
  st.vC = MatrixXd::Zero(p, n);
  st.mR = VectorXd::Zero(p);
  st.vR = VectorXd::Zero(p);
  st.mA = MatrixXd::Zero(n, n);
  st.vA = MatrixXd::Zero(n, n);
  st.mPi0 = MatrixXd::Zero(n, n);
  st.vPi0 = MatrixXd::Zero(n, n);

  for (long it = 0; it < iters; ++it) {
    S3idGradients grads;
    grads.C = MatrixXd::Zero(p, n);
    grads.R = VectorXd::Zero(p);
    grads.Pi.assign(S + 1, MatrixXd::Zero(n, n));
    for (int s = 0; s <= S; ++s) {
      const MatrixXd Pi_s = st.latent_cov(s);
      MatrixXd delta = st.C * Pi_s * st.C.transpose() - targets[s];
      if (s == 0) delta += MatrixXd(st.R.asDiagonal());
      grads.C.noalias() += delta * st.C * Pi_s.transpose();
      grads.C.noalias() += delta.transpose() * st.C * Pi_s;
      grads.Pi[s].noalias() = st.C.transpose() * delta * st.C;
      if (s == 0) grads.R = delta.diagonal();
    }
    if (mode == LatentMode::kLinear) {
      auto [gA, gPi0] = grad_linear_mode(st, grads.Pi);
      grads.A = std::move(gA);
      grads.Pi0 = std::move(gPi0);
    }
    adam_step(st, grads, adam);
  }
  return st;
}

}  // namespace stitch
