#ifndef STITCH_OBSERVATION_HPP
#define STITCH_OBSERVATION_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stitch/rng.hpp"

namespace stitch {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Half-open interval of variable indices, 0-based.
struct IndexRange {
  int lo = 0;
  int hi = 0;
};

// One segment of a serial subset observation scheme: the observed index set
// is constant over the half-open time window [t_begin, t_end).
struct Segment {
  long t_begin = 0;
  long t_end = 0;
  std::vector<IndexRange> ranges;
};

class ObservationScheme {
 public:
  ObservationScheme() = default;
  ObservationScheme(int p, long T, std::vector<Segment> segments);

  int p() const { return p_; }
  long T() const { return T_; }
  const std::vector<Segment>& segments() const { return segments_; }

  int segment_index(long t) const;
  const std::vector<int>& observed_indices(int segment) const;
  bool is_observed(int i, long t) const;
  bool segment_contains(int segment, int i) const;

  std::string to_json() const;
  static ObservationScheme from_json(const std::string& text);

 private:
  int p_ = 0;
  long T_ = 0;
  std::vector<Segment> segments_;
  std::vector<std::vector<int>> observed_;  // per-segment sorted index lists
};

// Two consecutive sessions: I1 = [0, p1) then I2 = [p2-1, p) with
// |I1 and I2| = round(overlap_fraction * p).
ObservationScheme make_two_subset_scheme(int p, double overlap_fraction,
                                         long T1, long T2);

// k sequentially recorded index windows, consecutive windows overlapping in
// `overlap` variables, each observed for T_each time steps.
ObservationScheme make_multi_subset_scheme(int p, int k_subsets, int overlap,
                                           long T_each);

// Partition of variables into maximal sets sharing one observation pattern,
// with co-occurrence counts T^s_{ij} queried at group level.
class CooccurrenceGroups {
 public:
  explicit CooccurrenceGroups(const ObservationScheme& scheme);

  int group_count() const { return static_cast<int>(members_.size()); }
  int group_of(int i) const { return group_of_[i]; }
  const std::vector<int>& members(int g) const { return members_[g]; }
  const std::vector<int>& groups_in_segment(int segment) const {
    return segment_groups_[segment];
  }

  // T^s_{ab}: number of t with group a observed at t+s and group b at t.
  long count(int group_a, int group_b, int s) const;
  long pair_count(int i, int j, int s) const {
    return count(group_of_[i], group_of_[j], s);
  }

 private:
  std::vector<int> group_of_;
  std::vector<std::vector<int>> members_;
  std::vector<std::vector<std::pair<long, long>>> times_;  // merged intervals
  std::vector<std::vector<int>> segment_groups_;
};

// Variable pairs co-observed at least twice at one lag.
struct PairSet {
  int lag = 0;
  std::vector<std::pair<int, int>> pairs;
};

PairSet co_observed_pairs(const CooccurrenceGroups& groups, int p, int s);
PairSet sample_co_observed_pairs(const CooccurrenceGroups& groups, int p,
                                 int s, std::size_t max_pairs, Rng& rng);
std::vector<std::pair<int, int>> sample_never_co_observed_pairs(
    const CooccurrenceGroups& groups, int p, int s, std::size_t max_pairs,
    Rng& rng);

// Data matrix with its scheme. Unobserved entries of Y are never read; in
// serialized form they are quiet NaN.
struct MaskedTimeSeries {
  MatrixXd Y;  // T x p
  ObservationScheme scheme;
  VectorXd per_variable_mean;      // mean over observed times
  VectorXd observed_variance;      // unbiased variance over observed times
  std::vector<long> observed_count;

  static MaskedTimeSeries from_raw(MatrixXd Y, ObservationScheme scheme);
};

// Unbiased lagged covariance estimates for the requested pairs, centered by
// the per-variable observed-time means. Entry k corresponds to pairs.pairs[k].
// Throws NumericalError for a pair with co-occurrence count <= 1.
std::vector<double> empirical_lagged_cov(const MaskedTimeSeries& data, int s,
                                         const PairSet& pairs,
                                         const CooccurrenceGroups& groups);

}  // namespace stitch

#endif
