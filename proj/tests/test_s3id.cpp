#include <doctest.h>

#include <cmath>
#include <vector>

#include "stitch/errors.hpp"
#include "stitch/lds.hpp"
#include "stitch/observation.hpp"
#include "stitch/s3id.hpp"
#include "test_util.hpp"

using namespace stitch;
using namespace stitch::testutil;

namespace {

S3idConfig small_cfg(int n, int S, std::uint64_t seed) {
  S3idConfig cfg;
  cfg.n = n;
  cfg.max_lag = S;
  cfg.seed = seed;
  cfg.monitor_pairs = 50;
  return cfg;
}

// Central finite differences of the reference loss against the analytic
// full-batch gradient, nonlinear mode (free Pi_s matrices).
FdCheck fd_check_nonlinear(const MaskedTimeSeries& data, std::uint64_t seed) {
  const int S = 2;
  CooccurrenceGroups groups(data.scheme);
  S3idConfig cfg = small_cfg(2, S, seed);
  cfg.mode = LatentMode::kNonlinear;
  S3idState st = init_state(data, groups, cfg);
  const std::vector<double> w = {1.0, 0.7, 1.3};
  const auto batch = full_batch(data.scheme.T(), S);
  const S3idGradients g = grad_batch(st, data, groups, batch, w);

  const double eps = 1e-6;
  FdCheck check;
  auto loss_at = [&](const MatrixXd& C, const VectorXd& R,
                     const std::vector<MatrixXd>& Pis) {
    return naive_loss(C, R, Pis, data, groups, w);
  };

  for (long i = 0; i < st.C.rows(); ++i)
    for (long j = 0; j < st.C.cols(); ++j) {
      MatrixXd Cp = st.C, Cm = st.C;
      Cp(i, j) += eps;
      Cm(i, j) -= eps;
      const double fd =
          (loss_at(Cp, st.R, st.Pis) - loss_at(Cm, st.R, st.Pis)) / (2 * eps);
      check.update(g.C(i, j), fd);
    }
  for (long i = 0; i < st.R.size(); ++i) {
    VectorXd Rp = st.R, Rm = st.R;
    Rp(i) += eps;
    Rm(i) -= eps;
    const double fd =
        (loss_at(st.C, Rp, st.Pis) - loss_at(st.C, Rm, st.Pis)) / (2 * eps);
    check.update(g.R(i), fd);
  }
  for (int s = 0; s <= S; ++s)
    for (long i = 0; i < st.Pis[s].rows(); ++i)
      for (long j = 0; j < st.Pis[s].cols(); ++j) {
        auto Pp = st.Pis, Pm = st.Pis;
        Pp[s](i, j) += eps;
        Pm[s](i, j) -= eps;
        const double fd =
            (loss_at(st.C, st.R, Pp) - loss_at(st.C, st.R, Pm)) / (2 * eps);
        check.update(g.Pi[s](i, j), fd);
      }
  return check;
}

// Linear mode: Pi_s = A^s Pi0; A checked entrywise, Pi0 along symmetric
// perturbation directions (the analytic Pi0 gradient is symmetrized).
FdCheck fd_check_linear(const MaskedTimeSeries& data, std::uint64_t seed) {
  const int S = 2;
  CooccurrenceGroups groups(data.scheme);
  S3idConfig cfg = small_cfg(2, S, seed);
  S3idState st = init_state(data, groups, cfg);
  // Move A off the scaled identity so the chain rule is exercised fully.
  Rng rng = make_rng(seed, "perturb");
  std::normal_distribution<double> normal(0.0, 0.05);
  for (long i = 0; i < st.A.rows(); ++i)
    for (long j = 0; j < st.A.cols(); ++j) st.A(i, j) += normal(rng);
  for (long i = 0; i < st.Pi0.rows(); ++i)
    for (long j = 0; j <= i; ++j) {
      st.Pi0(i, j) += normal(rng);
      st.Pi0(j, i) = st.Pi0(i, j);
    }

  const std::vector<double> w = {1.0, 1.0, 1.0};
  const auto batch = full_batch(data.scheme.T(), S);
  S3idGradients g = grad_batch(st, data, groups, batch, w);
  auto [gA, gPi0] = grad_linear_mode(st, g.Pi);

  auto lin_loss = [&](const MatrixXd& A, const MatrixXd& Pi0) {
    std::vector<MatrixXd> Pis(S + 1);
    Pis[0] = Pi0;
    for (int s = 1; s <= S; ++s) Pis[s] = A * Pis[s - 1];
    return naive_loss(st.C, st.R, Pis, data, groups, w);
  };

  const double eps = 1e-6;
  FdCheck check;
  for (long i = 0; i < st.A.rows(); ++i)
    for (long j = 0; j < st.A.cols(); ++j) {
      MatrixXd Ap = st.A, Am = st.A;
      Ap(i, j) += eps;
      Am(i, j) -= eps;
      const double fd = (lin_loss(Ap, st.Pi0) - lin_loss(Am, st.Pi0)) / (2 * eps);
      check.update(gA(i, j), fd);
    }
  for (long i = 0; i < st.Pi0.rows(); ++i)
    for (long j = 0; j <= i; ++j) {
      MatrixXd Pp = st.Pi0, Pm = st.Pi0;
      Pp(i, j) += eps;
      Pm(i, j) -= eps;
      if (i != j) {
        Pp(j, i) += eps;
        Pm(j, i) -= eps;
      }
      const double fd = (lin_loss(st.A, Pp) - lin_loss(st.A, Pm)) / (2 * eps);
      // Directional derivative along E_ij + E_ji equals g_ij + g_ji.
      const double analytic = (i == j) ? gPi0(i, i) : gPi0(i, j) + gPi0(j, i);
      check.update(analytic, fd);
    }
  return check;
}

}  // namespace

TEST_CASE("grad_batch matches finite differences, nonlinear mode") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto full = random_instance(6, 2, 40, 0.3, seed, false);
    auto sso = random_instance(6, 2, 40, 0.3, seed + 100, true);
    for (const auto* data : {&full, &sso}) {
      FdCheck check = fd_check_nonlinear(*data, seed);
      CHECK(check.max_rel_err < 1e-5);
    }
  }
}

TEST_CASE("gradients match finite differences, linear mode chain rule") {
  for (std::uint64_t seed : {4u, 5u}) {
    auto sso = random_instance(6, 2, 40, 0.3, seed, true);
    FdCheck check = fd_check_linear(sso, seed);
    CHECK(check.max_rel_err < 1e-5);
  }
}

TEST_CASE("gradient vanishes at an exactly matching stationary point") {
  // p = 1, n = 1: set C = 1, R = 0 and Pi_s equal to the empirical moment
  // averages the loss is fit to; the full-data gradient must vanish.
  const long T = 30;
  const int S = 1;
  MatrixXd Y(T, 1);
  Rng rng = make_rng(99, "sim");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long t = 0; t < T; ++t) Y(t, 0) = normal(rng);
  ObservationScheme scheme(1, T, {{0, T, {{0, 1}}}});
  auto data = MaskedTimeSeries::from_raw(std::move(Y), std::move(scheme));
  CooccurrenceGroups groups(data.scheme);

  // Moment average over samples: mean of centered products at each lag.
  std::vector<MatrixXd> Pis(S + 1, MatrixXd::Zero(1, 1));
  for (int s = 0; s <= S; ++s) {
    double acc = 0.0;
    for (long t = 0; t + s < T; ++t)
      acc += (data.Y(t + s, 0) - data.per_variable_mean(0)) *
             (data.Y(t, 0) - data.per_variable_mean(0));
    Pis[s](0, 0) = acc / double(T - s);
  }

  S3idState st;
  st.mode = LatentMode::kNonlinear;
  st.S = S;
  st.C = MatrixXd::Ones(1, 1);
  st.R = VectorXd::Zero(1);
  st.Pis = Pis;

  const std::vector<double> w = {1.0, 1.0};
  const auto batch = full_batch(T, S);
  const S3idGradients g = grad_batch(st, data, groups, batch, w);
  // C couples lags; check the directly-averaged parameters.
  CHECK(std::abs(g.Pi[0](0, 0)) < 1e-12);
  CHECK(std::abs(g.Pi[1](0, 0)) < 1e-12);
  CHECK(std::abs(g.R(0)) < 1e-12);
}

TEST_CASE("adam_step clamps R and keeps Pi0 symmetric") {
  auto data = random_instance(5, 2, 30, 0.4, 7, true);
  CooccurrenceGroups groups(data.scheme);
  S3idConfig cfg = small_cfg(2, 1, 7);
  S3idState st = init_state(data, groups, cfg);
  st.R.setConstant(1e-9);

  S3idGradients g;
  g.C = MatrixXd::Zero(5, 2);
  g.R = VectorXd::Ones(5);  // pushes R negative
  g.Pi.assign(2, MatrixXd::Zero(2, 2));
  g.A = MatrixXd::Zero(2, 2);
  MatrixXd gp(2, 2);
  gp << 0.0, 1.0, -1.0, 0.0;  // asymmetric Pi0 gradient
  g.Pi0 = gp;

  AdamConfig adam;
  adam_step(st, g, adam);
  CHECK(st.R.minCoeff() >= 0.0);
  CHECK(st.Pi0.isApprox(st.Pi0.transpose()));

  g.C(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(st, g, adam), NumericalError);
}

TEST_CASE("lag weight validation") {
  S3idConfig cfg;
  cfg.n = 2;
  cfg.max_lag = 2;
  CHECK(cfg.effective_lag_weights() == std::vector<double>{1.0, 1.0, 1.0});
  cfg.lag_weights = {1.0, 2.0};
  CHECK_THROWS_AS(cfg.effective_lag_weights(), ConfigError);
  cfg.lag_weights = {1.0, -1.0, 0.5};
  CHECK_THROWS_AS(cfg.effective_lag_weights(), ConfigError);
}

TEST_CASE("hankel_ssid recovers exact covariances") {
  SimConfig sim;
  sim.p = 10;
  sim.n = 3;
  sim.T = 10;
  sim.seed = 21;
  LdsParams truth = generate_random_lds(sim);

  std::vector<MatrixXd> covs;
  for (int s = 0; s < 8; ++s) covs.push_back(predicted_lagged_cov(truth, s));
  HankelSsidResult res = hankel_ssid(covs, 3, 4, 4);
  CHECK_FALSE(res.rank_deficient);

  // Subspace recovery: project truth C onto the estimate's column space.
  Eigen::HouseholderQR<MatrixXd> qr(res.params.C);
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(10, 3);
  const double err =
      (truth.C - Q * (Q.transpose() * truth.C)).norm() / truth.C.norm();
  CHECK(err < 1e-8);

  // Predicted covariances of the estimate match the inputs.
  for (int s = 0; s < 4; ++s) {
    const MatrixXd pred = predicted_lagged_cov(res.params, s);
    CHECK((pred - covs[s]).norm() < 1e-6 * covs[s].norm());
  }

  // Requesting more latent dimensions than the Hankel rank is reported.
  HankelSsidResult over = hankel_ssid(covs, 6, 4, 4);
  CHECK(over.rank_deficient);
}

TEST_CASE("fit_s3id decreases the monitoring loss") {
  auto data = random_instance(30, 3, 2000, 0.3, 31, true);
  CooccurrenceGroups groups(data.scheme);
  S3idConfig cfg = small_cfg(3, 2, 31);
  cfg.passes = 3;
  cfg.monitor_pairs = 300;
  cfg.monitor_every = 100;
  S3idFit fit = fit_s3id(data, groups, cfg);
  REQUIRE(fit.trace.size() > 2);
  CHECK(fit.trace.back().monitor_loss < 0.5 * fit.trace.front().monitor_loss);
  CHECK(fit.params.C.rows() == 30);
  // Exported Pi0 is symmetric PSD.
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(fit.params.Pi0);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
}
