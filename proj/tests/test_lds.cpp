#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <vector>

#include "stitch/errors.hpp"
#include "stitch/lds.hpp"
#include "stitch/rng.hpp"

using namespace stitch;

TEST_CASE("solve_stationary_covariance closed forms") {
  SUBCASE("scalar geometric series") {
    const MatrixXd A = 0.5 * MatrixXd::Identity(2, 2);
    const MatrixXd Q = MatrixXd::Identity(2, 2);
    const MatrixXd Pi = solve_stationary_covariance(A, Q);
    CHECK((Pi - (4.0 / 3.0) * MatrixXd::Identity(2, 2)).norm() < 1e-10);
  }
  SUBCASE("no dynamics") {
    MatrixXd Q(2, 2);
    Q << 2.0, 0.3, 0.3, 1.0;
    const MatrixXd Pi = solve_stationary_covariance(MatrixXd::Zero(2, 2), Q);
    CHECK((Pi - Q).norm() < 1e-12);
  }
  SUBCASE("random stable system satisfies the Lyapunov equation") {
    Rng rng = make_rng(3, "lds");
    std::normal_distribution<double> normal(0.0, 1.0);
    MatrixXd A(3, 3), B(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        A(i, j) = 0.3 * normal(rng);
        B(i, j) = normal(rng);
      }
    const MatrixXd Q = B * B.transpose();
    const MatrixXd Pi = solve_stationary_covariance(A, Q);
    CHECK((Pi - A * Pi * A.transpose() - Q).norm() < 1e-10 * std::max(1.0, Q.norm()));
    CHECK(Pi.isApprox(Pi.transpose()));
  }
  SUBCASE("unstable dynamics rejected") {
    const MatrixXd A = 1.1 * MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(solve_stationary_covariance(A, MatrixXd::Identity(2, 2)),
                    NumericalError);
  }
}

TEST_CASE("generate_random_lds eigenvalue placement") {
  SUBCASE("moduli linearly span the configured interval") {
    SimConfig cfg;
    cfg.p = 1000;
    cfg.n = 10;
    cfg.T = 10;
    cfg.seed = 5;
    const LdsParams params = generate_random_lds(cfg);
    const Eigen::VectorXcd ev = params.A.eigenvalues();
    std::vector<double> mods(ev.size());
    for (int k = 0; k < ev.size(); ++k) mods[k] = std::abs(ev(k));
    std::sort(mods.begin(), mods.end());
    for (double m : mods) {
      CHECK(m >= 0.9 - 1e-9);
      CHECK(m <= 0.99 + 1e-9);
    }
    // Sorted moduli close to the arithmetic progression over [0.9, 0.99].
    const double step = (0.99 - 0.9) / 9.0;
    for (int k = 0; k < 10; ++k)
      CHECK(std::abs(mods[k] - (0.9 + k * step)) < step);
  }
  SUBCASE("n = 2 with zero angles gives real endpoint eigenvalues") {
    SimConfig cfg;
    cfg.p = 4;
    cfg.n = 2;
    cfg.T = 10;
    cfg.seed = 2;
    cfg.vonmises_kappa = 1e15;  // angle pinned to zero
    const LdsParams params = generate_random_lds(cfg);
    const Eigen::VectorXcd ev = params.A.eigenvalues();
    std::vector<double> re = {ev(0).real(), ev(1).real()};
    std::sort(re.begin(), re.end());
    CHECK(std::abs(ev(0).imag()) < 1e-9);
    CHECK(std::abs(ev(1).imag()) < 1e-9);
    CHECK(re[0] == doctest::Approx(0.9).epsilon(1e-9));
    CHECK(re[1] == doctest::Approx(0.99).epsilon(1e-9));
  }
  SUBCASE("private noise fraction splits the variance") {
    SimConfig cfg;
    cfg.p = 20;
    cfg.n = 4;
    cfg.T = 10;
    cfg.seed = 7;
    const LdsParams params = generate_random_lds(cfg);
    for (int i = 0; i < 20; ++i) {
      const double signal =
          params.C.row(i) * params.Pi0 * params.C.row(i).transpose();
      CHECK(std::abs(signal - params.R(i)) < 1e-8);  // 50/50 split
    }
  }
  SUBCASE("deterministic per seed and validates") {
    SimConfig cfg;
    cfg.p = 12;
    cfg.n = 3;
    cfg.T = 10;
    cfg.seed = 11;
    const LdsParams a = generate_random_lds(cfg);
    const LdsParams b = generate_random_lds(cfg);
    CHECK(a.A == b.A);
    CHECK(a.C == b.C);
    CHECK(a.R == b.R);
    validate_lds(a);
  }
  SUBCASE("rejects bad configs") {
    SimConfig cfg;
    cfg.p = 2;
    cfg.n = 4;
    cfg.T = 10;
    CHECK_THROWS_AS(generate_random_lds(cfg), ConfigError);
    cfg.n = 2;
    cfg.eig_modulus_hi = 1.0;
    CHECK_THROWS_AS(generate_random_lds(cfg), ConfigError);
  }
}

TEST_CASE("predicted lagged covariances") {
  SUBCASE("identity substitution at s = 0 and s = 1") {
    LdsParams params;
    params.A = 0.5 * MatrixXd::Identity(2, 2);
    params.C = MatrixXd::Identity(2, 2);
    params.Q = MatrixXd::Identity(2, 2);
    params.Pi0 = MatrixXd::Identity(2, 2);
    params.R = 0.5 * VectorXd::Ones(2);
    CHECK((predicted_lagged_cov(params, 0) - 1.5 * MatrixXd::Identity(2, 2))
              .norm() < 1e-14);
    CHECK((predicted_lagged_cov(params, 1) - 0.5 * MatrixXd::Identity(2, 2))
              .norm() < 1e-14);
  }
  SUBCASE("matches explicit triple product at s = 2") {
    SimConfig cfg;
    cfg.p = 3;
    cfg.n = 2;
    cfg.T = 10;
    cfg.seed = 9;
    const LdsParams params = generate_random_lds(cfg);
    const MatrixXd expect =
        params.C * params.A * params.A * params.Pi0 * params.C.transpose();
    CHECK((predicted_lagged_cov(params, 2) - expect).norm() < 1e-12);
  }
  SUBCASE("entry and block evaluation agree with the full matrix") {
    SimConfig cfg;
    cfg.p = 6;
    cfg.n = 2;
    cfg.T = 10;
    cfg.seed = 13;
    const LdsParams params = generate_random_lds(cfg);
    for (int s : {0, 1}) {
      const MatrixXd Pi_s = s == 0 ? params.Pi0 : (params.A * params.Pi0).eval();
      const MatrixXd full = predicted_lagged_cov(params, s);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
          CHECK(predicted_cov_entry(params.C, Pi_s, params.R, s, i, j) ==
                doctest::Approx(full(i, j)).epsilon(1e-12));
      const MatrixXd block = predicted_lagged_cov_block(
          params.C, Pi_s, params.R, s, {1, 3}, {0, 1, 5});
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 3; ++b)
          CHECK(block(a, b) ==
                doctest::Approx(full(std::vector<int>{1, 3}[a],
                                     std::vector<int>{0, 1, 5}[b]))
                    .epsilon(1e-12));
    }
  }
  SUBCASE("Lambda(0) symmetric, linear/nonlinear consistency") {
    SimConfig cfg;
    cfg.p = 5;
    cfg.n = 3;
    cfg.T = 10;
    cfg.seed = 17;
    const LdsParams params = generate_random_lds(cfg);
    const MatrixXd L0 = predicted_lagged_cov(params, 0);
    CHECK((L0 - L0.transpose()).norm() <= 1e-12 * L0.norm());
    const LatentMoments moments = linear_latent_moments(params, 3);
    for (int s = 0; s <= 3; ++s)
      CHECK((predicted_lagged_cov(params, s) -
             predicted_lagged_cov(params.C, moments, params.R, s))
                .norm() < 1e-12);
  }
}

TEST_CASE("simulate") {
  SUBCASE("noise-free identity emission reproduces latents") {
    LdsParams params;
    params.A = 0.5 * MatrixXd::Identity(2, 2);
    params.C = MatrixXd::Identity(2, 2);
    params.Q = MatrixXd::Identity(2, 2);
    params.Pi0 = solve_stationary_covariance(params.A, params.Q);
    params.R = VectorXd::Zero(2);
    auto [Y, X] = simulate(params, 50, 3);
    CHECK((Y - X).norm() == 0.0);
  }
  SUBCASE("scalar stationary variance") {
    LdsParams params;
    params.A = 0.9 * MatrixXd::Identity(1, 1);
    params.Q = 0.19 * MatrixXd::Identity(1, 1);
    params.Pi0 = MatrixXd::Identity(1, 1);  // 0.19 / (1 - 0.81) = 1
    params.C = MatrixXd::Identity(1, 1);
    params.R = VectorXd::Zero(1);
    auto [Y, X] = simulate(params, 100000, 5);
    const double var = (X.array() - X.mean()).square().sum() / (X.rows() - 1);
    CHECK(std::abs(var - 1.0) < 0.05);
  }
  SUBCASE("deterministic per seed, rejects T < 2") {
    SimConfig cfg;
    cfg.p = 4;
    cfg.n = 2;
    cfg.T = 10;
    cfg.seed = 23;
    const LdsParams params = generate_random_lds(cfg);
    auto [Y1, X1] = simulate(params, 20, 9);
    auto [Y2, X2] = simulate(params, 20, 9);
    CHECK(Y1 == Y2);
    CHECK_THROWS_AS(simulate(params, 1, 9), ConfigError);
  }
  SUBCASE("empirical latent covariance converges to Pi0") {
    SimConfig cfg;
    cfg.p = 8;
    cfg.n = 3;
    cfg.T = 10;
    cfg.seed = 29;
    const LdsParams params = generate_random_lds(cfg);
    auto [Y, X] = simulate(params, 100000, 31);
    const Eigen::RowVectorXd mean = X.colwise().mean();
    const MatrixXd centered = X.rowwise() - mean;
    const MatrixXd S = centered.transpose() * centered / double(X.rows() - 1);
    CHECK((S - params.Pi0).norm() / params.Pi0.norm() < 0.05);
  }
}

TEST_CASE("clamp_psd clamps negative eigenvalues") {
  MatrixXd M(2, 2);
  M << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const MatrixXd P = clamp_psd(M);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(P);
  CHECK(es.eigenvalues().minCoeff() >= -1e-14);
  CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(3.0));
}
