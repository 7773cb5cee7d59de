#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "stitch/errors.hpp"
#include "stitch/lds.hpp"
#include "stitch/observation.hpp"
#include "test_util.hpp"

using namespace stitch;

namespace {

// Brute-force co-occurrence count by direct enumeration over t.
long brute_count(const ObservationScheme& scheme, int i, int j, int s) {
  long cnt = 0;
  for (long t = 0; t + s < scheme.T(); ++t)
    if (scheme.is_observed(i, t + s) && scheme.is_observed(j, t)) ++cnt;
  return cnt;
}

}  // namespace

TEST_CASE("two-subset scheme construction") {
  SUBCASE("small hand-checked layout") {
    // p = 4, overlap 2: I1 = {0,1,2}, I2 = {1,2,3} (0-based).
    const ObservationScheme scheme = make_two_subset_scheme(4, 0.5, 3, 3);
    REQUIRE(scheme.segments().size() == 2);
    CHECK(scheme.observed_indices(0) == std::vector<int>{0, 1, 2});
    CHECK(scheme.observed_indices(1) == std::vector<int>{1, 2, 3});
    CHECK(scheme.segments()[0].t_end == 3);
    CHECK(scheme.segments()[1].t_begin == 3);
  }
  SUBCASE("10 percent overlap at p = 1000") {
    const ObservationScheme scheme = make_two_subset_scheme(1000, 0.10, 50000, 50000);
    std::set<int> i1(scheme.observed_indices(0).begin(),
                     scheme.observed_indices(0).end());
    int inter = 0;
    for (int v : scheme.observed_indices(1)) inter += i1.count(v);
    CHECK(inter == 100);
    // Union covers everything.
    std::set<int> all = i1;
    all.insert(scheme.observed_indices(1).begin(), scheme.observed_indices(1).end());
    CHECK(static_cast<int>(all.size()) == 1000);
  }
  SUBCASE("full overlap degenerates to full observation") {
    const ObservationScheme scheme = make_two_subset_scheme(100, 1.0, 10, 10);
    CHECK(scheme.observed_indices(0).size() == 100);
    CHECK(scheme.observed_indices(1).size() == 100);
  }
}

TEST_CASE("multi-subset scheme construction") {
  SUBCASE("4 windows over p = 40 with overlap 4") {
    const ObservationScheme scheme = make_multi_subset_scheme(40, 4, 4, 10);
    REQUIRE(scheme.segments().size() == 4);
    std::set<int> covered;
    for (int m = 0; m < 4; ++m) {
      const auto& idx = scheme.observed_indices(m);
      covered.insert(idx.begin(), idx.end());
      if (m > 0) {
        std::set<int> prev(scheme.observed_indices(m - 1).begin(),
                           scheme.observed_indices(m - 1).end());
        int inter = 0;
        for (int v : idx) inter += prev.count(v);
        CHECK(inter == 4);
      }
    }
    CHECK(static_cast<int>(covered.size()) == 40);
  }
  SUBCASE("20 windows over p = 1000 with overlap 10") {
    const ObservationScheme scheme = make_multi_subset_scheme(1000, 20, 10, 100);
    REQUIRE(scheme.segments().size() == 20);
    std::set<int> covered;
    for (int m = 0; m < 20; ++m) {
      const auto& idx = scheme.observed_indices(m);
      covered.insert(idx.begin(), idx.end());
    }
    CHECK(static_cast<int>(covered.size()) == 1000);
  }
  SUBCASE("k = 2 matches the two-subset constructor") {
    const ObservationScheme multi = make_multi_subset_scheme(40, 2, 8, 25);
    const ObservationScheme two = make_two_subset_scheme(40, 0.2, 25, 25);
    CHECK(multi.observed_indices(0) == two.observed_indices(0));
    CHECK(multi.observed_indices(1) == two.observed_indices(1));
  }
  SUBCASE("impossible coverage rejected") {
    CHECK_THROWS_AS(make_multi_subset_scheme(40, 4, 40, 10), ConfigError);
  }
}

TEST_CASE("co-occurrence groups and counts") {
  SUBCASE("hand-enumerated two-segment scheme") {
    // Omega_t = {0,1,2} for t in [0,3), {2,3} for t in [3,6) (0-based).
    const ObservationScheme scheme(
        4, 6, {{0, 3, {{0, 3}}}, {3, 6, {{2, 4}}}});
    const CooccurrenceGroups groups(scheme);
    // Groups: {0,1}, {2}, {3}.
    CHECK(groups.group_count() == 3);
    CHECK(groups.group_of(0) == groups.group_of(1));
    CHECK(groups.group_of(0) != groups.group_of(2));
    CHECK(groups.group_of(2) != groups.group_of(3));
    CHECK(groups.pair_count(0, 1, 0) == 3);
    CHECK(groups.pair_count(0, 2, 0) == 3);
    CHECK(groups.pair_count(0, 3, 0) == 0);
    CHECK(groups.pair_count(2, 3, 0) == 3);
    CHECK(groups.pair_count(2, 2, 0) == 6);
    // Lag 1: variable 3 observed at t+1 while 0 observed at t: only t = 2.
    CHECK(groups.pair_count(3, 0, 1) == 1);
  }
  SUBCASE("full observation: one group with T - s counts") {
    const ObservationScheme scheme(5, 30, {{0, 30, {{0, 5}}}});
    const CooccurrenceGroups groups(scheme);
    CHECK(groups.group_count() == 1);
    for (int s : {0, 1, 5}) CHECK(groups.pair_count(0, 3, s) == 30 - s);
  }
  SUBCASE("group counts match brute force on random schemes") {
    for (std::uint64_t seed : {1u, 2u}) {
      const int p = 20;
      const ObservationScheme scheme =
          seed == 1 ? make_two_subset_scheme(p, 0.3, 40, 60)
                    : make_multi_subset_scheme(p, 3, 3, 30);
      const CooccurrenceGroups groups(scheme);
      // Partition property.
      std::vector<int> seen(p, 0);
      for (int g = 0; g < groups.group_count(); ++g)
        for (int i : groups.members(g)) seen[i] += 1;
      CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
      for (int s : {0, 1, 2}) {
        for (int i = 0; i < p; i += 3)
          for (int j = 0; j < p; j += 2)
            CHECK(groups.pair_count(i, j, s) == brute_count(scheme, i, j, s));
        // Count symmetry at s = 0.
        CHECK(groups.pair_count(3, 11, 0) == groups.pair_count(11, 3, 0));
      }
    }
  }
  SUBCASE("co-observed pair set matches brute force") {
    const ObservationScheme scheme = make_two_subset_scheme(10, 0.2, 8, 8);
    const CooccurrenceGroups groups(scheme);
    for (int s : {0, 1, 2}) {
      const PairSet ps = co_observed_pairs(groups, 10, s);
      std::set<std::pair<int, int>> got(ps.pairs.begin(), ps.pairs.end());
      std::set<std::pair<int, int>> expect;
      for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j)
          if (brute_count(scheme, i, j, s) > 1) expect.insert({i, j});
      CHECK(got == expect);
    }
  }
  SUBCASE("never-co-observed sampling is disjoint from co-observed pairs") {
    const ObservationScheme scheme = make_two_subset_scheme(30, 0.1, 50, 50);
    const CooccurrenceGroups groups(scheme);
    Rng rng = make_rng(5, "test");
    const auto never = sample_never_co_observed_pairs(groups, 30, 0, 1000, rng);
    CHECK(!never.empty());
    for (const auto& [i, j] : never) CHECK(groups.pair_count(i, j, 0) == 0);
  }
}

TEST_CASE("empirical lagged covariance estimator") {
  SUBCASE("three-point hand computation") {
    MatrixXd Y(3, 1);
    Y << 1.0, -1.0, 2.0;
    const ObservationScheme scheme(1, 3, {{0, 3, {{0, 1}}}});
    const auto data = MaskedTimeSeries::from_raw(Y, scheme);
    const CooccurrenceGroups groups(scheme);
    PairSet ps;
    ps.lag = 0;
    ps.pairs = {{0, 0}};
    const auto est = empirical_lagged_cov(data, 0, ps, groups);
    CHECK(est[0] == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("constant series has zero variance") {
    MatrixXd Y = MatrixXd::Constant(5, 1, 3.7);
    const ObservationScheme scheme(1, 5, {{0, 5, {{0, 1}}}});
    const auto data = MaskedTimeSeries::from_raw(Y, scheme);
    const CooccurrenceGroups groups(scheme);
    PairSet ps;
    ps.lag = 0;
    ps.pairs = {{0, 0}};
    CHECK(empirical_lagged_cov(data, 0, ps, groups)[0] == 0.0);
  }
  SUBCASE("matches dense sample covariance under full observation") {
    auto data = testutil::random_instance(6, 2, 80, 0.3, 7, false);
    const CooccurrenceGroups groups(data.scheme);
    const PairSet ps = co_observed_pairs(groups, 6, 0);
    const auto est = empirical_lagged_cov(data, 0, ps, groups);
    const Eigen::RowVectorXd mean = data.Y.colwise().mean();
    const MatrixXd centered = data.Y.rowwise() - mean;
    const MatrixXd S = centered.transpose() * centered / double(data.Y.rows() - 1);
    for (std::size_t k = 0; k < ps.pairs.size(); ++k)
      CHECK(std::abs(est[k] - S(ps.pairs[k].first, ps.pairs[k].second)) < 1e-12);
  }
  SUBCASE("insufficient co-observation rejected") {
    const ObservationScheme scheme(2, 4, {{0, 2, {{0, 1}}}, {2, 4, {{1, 2}}}});
    MatrixXd Y = MatrixXd::Zero(4, 2);
    const auto data = MaskedTimeSeries::from_raw(Y, scheme);
    const CooccurrenceGroups groups(scheme);
    PairSet ps;
    ps.lag = 0;
    ps.pairs = {{0, 1}};  // never co-observed
    CHECK_THROWS_AS(empirical_lagged_cov(data, 0, ps, groups), NumericalError);
  }
  SUBCASE("unbiased within three standard errors across simulations") {
    SimConfig cfg;
    cfg.p = 4;
    cfg.n = 2;
    cfg.T = 5000;
    cfg.seed = 77;
    const LdsParams truth = generate_random_lds(cfg);
    const ObservationScheme scheme(4, cfg.T, {{0, cfg.T, {{0, 4}}}});
    const CooccurrenceGroups groups(scheme);
    PairSet ps;
    ps.lag = 0;
    ps.pairs = {{0, 1}, {2, 3}, {1, 1}};
    std::vector<double> sums(ps.pairs.size(), 0.0), sqs(ps.pairs.size(), 0.0);
    const int reps = 50;
    for (int r = 0; r < reps; ++r) {
      auto [Y, X] = simulate(truth, cfg.T, 1000 + r);
      const auto data = MaskedTimeSeries::from_raw(std::move(Y), scheme);
      const auto est = empirical_lagged_cov(data, 0, ps, groups);
      for (std::size_t k = 0; k < est.size(); ++k) {
        sums[k] += est[k];
        sqs[k] += est[k] * est[k];
      }
    }
    const MatrixXd L0 = predicted_lagged_cov(truth, 0);
    for (std::size_t k = 0; k < ps.pairs.size(); ++k) {
      const double mean = sums[k] / reps;
      const double se =
          std::sqrt((sqs[k] / reps - mean * mean) / (reps - 1));
      CHECK(std::abs(mean - L0(ps.pairs[k].first, ps.pairs[k].second)) <
            3.0 * se);
    }
  }
}

TEST_CASE("scheme JSON round trip and validation") {
  const ObservationScheme scheme = make_multi_subset_scheme(30, 3, 4, 20);
  const ObservationScheme back = ObservationScheme::from_json(scheme.to_json());
  CHECK(back.p() == scheme.p());
  CHECK(back.T() == scheme.T());
  REQUIRE(back.segments().size() == scheme.segments().size());
  for (std::size_t s = 0; s < back.segments().size(); ++s)
    CHECK(back.observed_indices(static_cast<int>(s)) ==
          scheme.observed_indices(static_cast<int>(s)));

  // Time gaps rejected.
  CHECK_THROWS_AS(ObservationScheme(2, 10, {{0, 4, {{0, 2}}}, {5, 10, {{0, 2}}}}),
                  ConfigError);
}

TEST_CASE("masked series statistics use observed times only") {
  const ObservationScheme scheme(2, 4, {{0, 2, {{0, 2}}}, {2, 4, {{1, 2}}}});
  MatrixXd Y(4, 2);
  Y << 1.0, 5.0, 3.0, 7.0, 99.0, 9.0, 99.0, 11.0;  // 99s are never observed
  const auto data = MaskedTimeSeries::from_raw(Y, scheme);
  CHECK(data.per_variable_mean(0) == doctest::Approx(2.0));
  CHECK(data.per_variable_mean(1) == doctest::Approx(8.0));
  CHECK(data.observed_count[0] == 2);
  CHECK(data.observed_count[1] == 4);
}
