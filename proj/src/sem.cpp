#include "stitch/sem.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "stitch/errors.hpp"

namespace stitch {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

MatrixXd robust_spd_inverse(const MatrixXd& M, const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(M);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive())
    return ldlt.solve(MatrixXd::Identity(M.rows(), M.cols()));
  std::cerr << "stitch: " << what
            << ": singular second-moment factor, regularizing\n";
  const double reg = 1e-10 * std::max(1.0, M.trace() / M.rows());
  return (M + reg * MatrixXd::Identity(M.rows(), M.cols()))
      .ldlt()
      .solve(MatrixXd::Identity(M.rows(), M.cols()));
}

}  // namespace

FilterResult kalman_filter_subset(const LdsParams& params,
                                  const MaskedTimeSeries& data,
                                  double cov_converge_tol,
                                  const VectorXd* offset) {
  const int n = params.n();
  const long T = data.scheme.T();
  const auto& segments = data.scheme.segments();

  // Per-segment quantities: observation rows are constant within a segment.
  struct SegmentOps {
    std::vector<int> obs;
    MatrixXd C;       // |obs| x n
    VectorXd rinv;    // 1 / R over obs
    MatrixXd W;       // C^T R^-1 C
    double logdet_r = 0.0;
  };
  std::vector<SegmentOps> ops(segments.size());
  for (std::size_t seg = 0; seg < segments.size(); ++seg) {
    const auto& obs = data.scheme.observed_indices(static_cast<int>(seg));
    SegmentOps& op = ops[seg];
    op.obs = obs;
    op.C = MatrixXd(obs.size(), n);
    op.rinv = VectorXd(obs.size());
    for (std::size_t k = 0; k < obs.size(); ++k) {
      if (!(params.R(obs[k]) > 0.0))
        throw NumericalError(
            "kalman_filter_subset: nonpositive observation noise variance at "
            "variable " +
            std::to_string(obs[k] + 1));
      op.C.row(k) = params.C.row(obs[k]);
      op.rinv(k) = 1.0 / params.R(obs[k]);
      op.logdet_r += std::log(params.R(obs[k]));
    }
    op.W = op.C.transpose() * op.rinv.asDiagonal() * op.C;
  }

  FilterResult res;
  res.filt_means = MatrixXd::Zero(T, n);
  res.pred_means = MatrixXd::Zero(T, n);
  res.filt_covs.resize(T);
  res.pred_covs.resize(T);

  VectorXd mu_f = VectorXd::Zero(n);
  MatrixXd P_f;
  int cur_seg = -1;
  bool frozen = false;
  double frozen_logdet_b = 0.0;
  MatrixXd frozen_P_pred, frozen_P_upd;
  VectorXd e, g, y_obs;
  const MatrixXd eye = MatrixXd::Identity(n, n);

  for (long t = 0; t < T; ++t) {
    const int seg = data.scheme.segment_index(t);
    const SegmentOps& op = ops[seg];
    if (seg != cur_seg) {
      cur_seg = seg;
      frozen = false;
    }

    VectorXd mu_p;
    MatrixXd P_p;
    if (t == 0) {
      mu_p = VectorXd::Zero(n);
      P_p = params.Pi0;
    } else {
      mu_p = params.A * mu_f;
      if (frozen)
        P_p = frozen_P_pred;
      else
        P_p = params.A * P_f * params.A.transpose() + params.Q;
    }

    double logdet_b;
    MatrixXd P_u;
    if (frozen) {
      P_u = frozen_P_upd;
      logdet_b = frozen_logdet_b;
    } else {
      Eigen::PartialPivLU<MatrixXd> lu(eye + P_p * op.W);
      const double det = lu.determinant();
      if (!(det > 0.0) || !std::isfinite(det))
        throw NumericalError(
            "kalman_filter_subset: singular innovation covariance at t = " +
            std::to_string(t + 1));
      logdet_b = std::log(det);
      P_u = lu.solve(P_p);
      P_u = (0.5 * (P_u + P_u.transpose())).eval();
      if (t > 0 && data.scheme.segment_index(t - 1) == seg &&
          (P_u - res.filt_covs[t - 1]).norm() < cov_converge_tol) {
        frozen = true;
        frozen_P_pred = P_p;
        frozen_P_upd = P_u;
        frozen_logdet_b = logdet_b;
      }
    }

    const std::size_t m = op.obs.size();
    y_obs.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
      y_obs(k) = data.Y(t, op.obs[k]);
      if (offset) y_obs(k) -= (*offset)(op.obs[k]);
    }
    e = y_obs - op.C * mu_p;
    g = op.C.transpose() * (op.rinv.asDiagonal() * e);
    mu_f = mu_p + P_u * g;

    const double quad = e.dot(op.rinv.asDiagonal() * e) - g.dot(P_u * g);
    res.loglik -= 0.5 * (m * kLog2Pi + op.logdet_r + logdet_b + quad);

    res.pred_means.row(t) = mu_p.transpose();
    res.filt_means.row(t) = mu_f.transpose();
    res.pred_covs[t] = std::move(P_p);
    res.filt_covs[t] = P_u;
    P_f = std::move(P_u);
  }
  if (!std::isfinite(res.loglik))
    throw NumericalError("kalman_filter_subset: non-finite log-likelihood");
  return res;
}

SmoothedPosterior kalman_smooth(const LdsParams& params,
                                const FilterResult& filtered) {
  const long T = filtered.filt_means.rows();
  const int n = params.n();
  SmoothedPosterior post;
  post.means = MatrixXd::Zero(T, n);
  post.covs.resize(T);
  if (T > 1) post.lag_one.resize(T - 1);

  post.means.row(T - 1) = filtered.filt_means.row(T - 1);
  post.covs[T - 1] = filtered.filt_covs[T - 1];

  for (long t = T - 2; t >= 0; --t) {
    const MatrixXd& P_f = filtered.filt_covs[t];
    const MatrixXd& P_p1 = filtered.pred_covs[t + 1];
    // J = P_f A^T P_p1^{-1}
    Eigen::LDLT<MatrixXd> ldlt(P_p1);
    MatrixXd J;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      J = ldlt.solve(params.A * P_f).transpose();
    } else {
      const double reg = 1e-12 * std::max(1.0, P_p1.trace() / n);
      J = (P_p1 + reg * MatrixXd::Identity(n, n))
              .ldlt()
              .solve(params.A * P_f)
              .transpose();
    }
    post.means.row(t) =
        filtered.filt_means.row(t) +
        (J * (post.means.row(t + 1) - filtered.pred_means.row(t + 1))
                 .transpose())
            .transpose();
    MatrixXd P_s = P_f + J * (post.covs[t + 1] - P_p1) * J.transpose();
    post.covs[t] = 0.5 * (P_s + P_s.transpose());
    post.lag_one[t] = post.covs[t + 1] * J.transpose();
  }
  return post;
}

LdsParams m_step(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
                 const SmoothedPosterior& posterior, VectorXd* offset_out) {
  const long T = posterior.means.rows();
  const int n = static_cast<int>(posterior.means.cols());
  const int p = data.scheme.p();

  LdsParams out;

  // Dynamics sufficient statistics over all time points.
  MatrixXd S00 = MatrixXd::Zero(n, n);  // sum_{t<T-1} E[x_t x_t^T]
  MatrixXd S11 = MatrixXd::Zero(n, n);  // sum_{t>0}  E[x_t x_t^T]
  MatrixXd S10 = MatrixXd::Zero(n, n);  // sum_{t>0}  E[x_t x_{t-1}^T]
  for (long t = 0; t < T; ++t) {
    const MatrixXd Exx =
        posterior.covs[t] +
        posterior.means.row(t).transpose() * posterior.means.row(t);
    if (t < T - 1) S00 += Exx;
    if (t > 0) {
      S11 += Exx;
      S10 += posterior.lag_one[t - 1] +
             posterior.means.row(t).transpose() * posterior.means.row(t - 1);
    }
  }
  out.A = S10 * robust_spd_inverse(S00, "m_step A update");
  MatrixXd Q = (S11 - out.A * S10.transpose()) / double(T - 1);
  out.Q = 0.5 * (Q + Q.transpose());
  out.Pi0 = posterior.covs[0] + posterior.means.row(0).transpose() *
                                    posterior.means.row(0);
  out.Pi0 = (0.5 * (out.Pi0 + out.Pi0.transpose())).eval();

  // Emission update per co-occurrence group: all members share O_i and
  // therefore the inverse factor of the centered regression.
  out.C = MatrixXd::Zero(p, n);
  out.R = VectorXd::Zero(p);
  const auto& segments = data.scheme.segments();
  for (int g = 0; g < groups.group_count(); ++g) {
    const auto& idx = groups.members(g);
    long count = 0;
    VectorXd Sx = VectorXd::Zero(n);
    MatrixXd Exx = MatrixXd::Zero(n, n);
    MatrixXd SP = MatrixXd::Zero(n, n);
    MatrixXd Syx = MatrixXd::Zero(idx.size(), n);
    VectorXd Sy = VectorXd::Zero(idx.size());
    VectorXd Syy = VectorXd::Zero(idx.size());

    for (std::size_t seg = 0; seg < segments.size(); ++seg) {
      if (!data.scheme.segment_contains(static_cast<int>(seg), idx[0]))
        continue;
      const long t0 = segments[seg].t_begin;
      const long len = segments[seg].t_end - t0;
      count += len;
      const auto mu = posterior.means.middleRows(t0, len);
      Sx += mu.colwise().sum().transpose();
      Exx.noalias() += mu.transpose() * mu;
      for (long t = t0; t < t0 + len; ++t) SP += posterior.covs[t];
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto y = data.Y.col(idx[k]).segment(t0, len);
        Syx.row(k).noalias() += y.transpose() * mu;
        Sy(k) += y.sum();
        Syy(k) += y.squaredNorm();
      }
    }
    Exx += SP;

    const MatrixXd Finv = robust_spd_inverse(
        Exx - Sx * Sx.transpose() / double(count), "m_step C update");
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const int i = idx[k];
      out.C.row(i) =
          (Syx.row(k) - Sy(k) * Sx.transpose() / double(count)) * Finv;
      // Offset solving the same centered regression, and the exact residual
      // variance E[(y - d - Cx)^2] under the joint (C, d) maximizer.
      const double d = (Sy(k) - out.C.row(i).dot(Sx)) / double(count);
      const double sq_centered =
          Syy(k) - 2.0 * d * Sy(k) + double(count) * d * d;
      const double cross =
          out.C.row(i).dot(Syx.row(k)) - d * out.C.row(i).dot(Sx);
      const double quad = out.C.row(i) * Exx * out.C.row(i).transpose();
      out.R(i) = std::max((sq_centered - 2.0 * cross + quad) / double(count),
                          1e-12);
      if (offset_out) (*offset_out)(i) = d;
    }
  }
  return out;
}

namespace {

LdsParams random_sem_init(const MaskedTimeSeries& data, const SemConfig& cfg,
                          int restart) {
  const int p = data.scheme.p();
  const int n = cfg.n;
  Rng rng = make_rng(cfg.seed + 0x9e37 * static_cast<std::uint64_t>(restart),
                     "sem-init");
  std::normal_distribution<double> normal(0.0, 1.0);
  LdsParams params;
  params.C = MatrixXd(p, n);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < n; ++j) params.C(i, j) = normal(rng) / std::sqrt(double(n));
  params.R = (0.5 * data.observed_variance).cwiseMax(1e-6);
  params.A = 0.9 * MatrixXd::Identity(n, n);
  params.Q = 0.19 * MatrixXd::Identity(n, n);
  params.Pi0 = MatrixXd::Identity(n, n);
  return params;
}

SemFit run_em(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
              const SemConfig& cfg, LdsParams params) {
  SemFit fit;
  VectorXd offset = VectorXd::Zero(data.scheme.p());
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    FilterResult filt =
        kalman_filter_subset(params, data, cfg.cov_converge_tol, &offset);
    fit.loglik_trace.push_back(filt.loglik);
    if (std::isfinite(prev)) {
      const double scale = std::max(1.0, std::abs(prev));
      if (filt.loglik < prev - 1e-6 * scale)
        throw NumericalError(
            "fit_sem: log-likelihood decreased beyond tolerance at iteration " +
            std::to_string(iter + 1));
      if (filt.loglik - prev < cfg.loglik_rel_tol * scale) {
        fit.params = std::move(params);
        return fit;
      }
    }
    prev = filt.loglik;
    SmoothedPosterior post = kalman_smooth(params, filt);
    params = m_step(data, groups, post, &offset);
  }
  fit.params = std::move(params);
  return fit;
}

}  // namespace

SemFit fit_sem(const MaskedTimeSeries& data, const CooccurrenceGroups& groups,
               const SemConfig& cfg, const std::optional<LdsParams>& init) {
  if (cfg.n <= 0 || cfg.n > data.scheme.p())
    throw ConfigError("fit_sem: requires 0 < n <= p");
  if (!(cfg.loglik_rel_tol > 0.0) || cfg.cov_converge_tol < 0.0)
    throw ConfigError("fit_sem: tolerances must be positive");

  SemFit best;
  bool have = false;
  if (init) {
    best = run_em(data, groups, cfg, *init);
    have = true;
  } else {
    for (int r = 0; r < std::max(1, cfg.restarts); ++r) {
      SemFit fit = run_em(data, groups, cfg, random_sem_init(data, cfg, r));
      if (!have || fit.loglik_trace.back() > best.loglik_trace.back()) {
        best = std::move(fit);
        have = true;
      }
    }
  }

  // Export the stationary latent covariance when the dynamics allow it.
  if (spectral_radius(best.params.A) < 1.0 - 1e-9) {
    best.params.Pi0 =
        solve_stationary_covariance(best.params.A, clamp_psd(best.params.Q));
  } else {
    std::cerr << "stitch: fit_sem: estimated dynamics not stable, keeping "
                 "initial-state covariance as Pi0\n";
  }
  return best;
}

}  // namespace stitch
