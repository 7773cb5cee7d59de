#include "stitch/observation.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "stitch/errors.hpp"

namespace stitch {

using nlohmann::json;

ObservationScheme::ObservationScheme(int p, long T, std::vector<Segment> segments)
    : p_(p), T_(T), segments_(std::move(segments)) {
  if (p_ <= 0 || T_ <= 0) throw ConfigError("scheme: p and T must be positive");
  if (segments_.empty()) throw ConfigError("scheme: no segments");
  long t = 0;
  for (const Segment& seg : segments_) {
    if (seg.t_begin != t || seg.t_end <= seg.t_begin)
      throw ConfigError("scheme: segments must tile [1, T] without gaps or overlaps");
    t = seg.t_end;
    if (seg.ranges.empty()) throw ConfigError("scheme: segment observes nothing");
    int last = 0;
    for (std::size_t k = 0; k < seg.ranges.size(); ++k) {
      const IndexRange& r = seg.ranges[k];
      if (r.lo < (k == 0 ? 0 : last) || r.hi <= r.lo || r.hi > p_)
        throw ConfigError("scheme: index ranges must be sorted, disjoint and within [1, p]");
      last = r.hi;
    }
  }
  if (t != T_) throw ConfigError("scheme: segments must cover exactly [1, T]");

  observed_.resize(segments_.size());
  for (std::size_t s = 0; s < segments_.size(); ++s)
    for (const IndexRange& r : segments_[s].ranges)
      for (int i = r.lo; i < r.hi; ++i) observed_[s].push_back(i);
}

int ObservationScheme::segment_index(long t) const {
  if (t < 0 || t >= T_) throw ConfigError("scheme: time index out of range");
  // Segments are few; linear scan is fine.
  for (std::size_t s = 0; s < segments_.size(); ++s)
    if (t < segments_[s].t_end) return static_cast<int>(s);
  return static_cast<int>(segments_.size()) - 1;
}

const std::vector<int>& ObservationScheme::observed_indices(int segment) const {
  return observed_[segment];
}

bool ObservationScheme::segment_contains(int segment, int i) const {
  const auto& ranges = segments_[segment].ranges;
  for (const IndexRange& r : ranges)
    if (i >= r.lo && i < r.hi) return true;
  return false;
}

bool ObservationScheme::is_observed(int i, long t) const {
  return segment_contains(segment_index(t), i);
}

std::string ObservationScheme::to_json() const {
  json doc;
  doc["p"] = p_;
  doc["T"] = T_;
  doc["segments"] = json::array();
  for (const Segment& seg : segments_) {
    json js;
    js["t_start"] = seg.t_begin + 1;  // 1-based inclusive
    js["t_end"] = seg.t_end;
    json ranges = json::array();
    for (const IndexRange& r : seg.ranges)
      ranges.push_back(json::array({r.lo + 1, r.hi + 1}));  // 1-based half-open
    js["ranges"] = std::move(ranges);
    doc["segments"].push_back(std::move(js));
  }
  return doc.dump(2);
}

ObservationScheme ObservationScheme::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scheme: invalid JSON: ") + e.what());
  }
  try {
    const int p = doc.at("p").get<int>();
    const long T = doc.at("T").get<long>();
    std::vector<Segment> segments;
    for (const json& js : doc.at("segments")) {
      Segment seg;
      seg.t_begin = js.at("t_start").get<long>() - 1;
      seg.t_end = js.at("t_end").get<long>();
      for (const json& jr : js.at("ranges"))
        seg.ranges.push_back({jr.at(0).get<int>() - 1, jr.at(1).get<int>() - 1});
      segments.push_back(std::move(seg));
    }
    return ObservationScheme(p, T, std::move(segments));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scheme: missing or malformed field: ") + e.what());
  }
}

ObservationScheme make_two_subset_scheme(int p, double overlap_fraction,
                                         long T1, long T2) {
  if (overlap_fraction < 0.0 || overlap_fraction > 1.0)
    throw ConfigError("two_subset_scheme: overlap fraction must be in [0, 1]");
  const int o = static_cast<int>(std::lround(overlap_fraction * p));
  const int p1 = (p + o + 1) / 2;
  const int start2 = p1 - o;
  if (o > p1 || o > p - start2 || start2 < 0)
    throw ConfigError("two_subset_scheme: overlap larger than a subset");
  std::vector<Segment> segments;
  segments.push_back({0, T1, {{0, p1}}});
  segments.push_back({T1, T1 + T2, {{start2, p}}});
  return ObservationScheme(p, T1 + T2, std::move(segments));
}

ObservationScheme make_multi_subset_scheme(int p, int k_subsets, int overlap,
                                           long T_each) {
  if (k_subsets < 2) throw ConfigError("multi_subset_scheme: need k >= 2");
  if (overlap < 0) throw ConfigError("multi_subset_scheme: negative overlap");
  const long total = static_cast<long>(p) + static_cast<long>(k_subsets - 1) * overlap;
  const int base = static_cast<int>(total / k_subsets);
  const int rem = static_cast<int>(total % k_subsets);
  if (base <= overlap)
    throw ConfigError("multi_subset_scheme: windows fail to cover the variable range");
  std::vector<Segment> segments;
  int start = 0;
  for (int m = 0; m < k_subsets; ++m) {
    const int width = base + (m < rem ? 1 : 0);
    segments.push_back({static_cast<long>(m) * T_each,
                        static_cast<long>(m + 1) * T_each,
                        {{start, start + width}}});
    start += width - overlap;
  }
  if (segments.back().ranges[0].hi != p)
    throw ConfigError("multi_subset_scheme: windows fail to cover the variable range");
  return ObservationScheme(p, static_cast<long>(k_subsets) * T_each,
                           std::move(segments));
}

CooccurrenceGroups::CooccurrenceGroups(const ObservationScheme& scheme) {
  const int p = scheme.p();
  const int nseg = static_cast<int>(scheme.segments().size());
  group_of_.assign(p, -1);

  std::unordered_map<std::string, int> by_pattern;
  std::vector<std::string> patterns;
  for (int i = 0; i < p; ++i) {
    std::string pat(nseg, '0');
    for (int s = 0; s < nseg; ++s)
      if (scheme.segment_contains(s, i)) pat[s] = '1';
    auto [it, inserted] = by_pattern.try_emplace(pat, static_cast<int>(members_.size()));
    if (inserted) {
      members_.emplace_back();
      patterns.push_back(pat);
    }
    group_of_[i] = it->second;
    members_[it->second].push_back(i);
  }

  times_.resize(members_.size());
  for (std::size_t g = 0; g < members_.size(); ++g) {
    for (int s = 0; s < nseg; ++s) {
      if (patterns[g][s] != '1') continue;
      const Segment& seg = scheme.segments()[s];
      if (!times_[g].empty() && times_[g].back().second == seg.t_begin)
        times_[g].back().second = seg.t_end;
      else
        times_[g].emplace_back(seg.t_begin, seg.t_end);
    }
  }

  segment_groups_.resize(nseg);
  for (int s = 0; s < nseg; ++s)
    for (std::size_t g = 0; g < members_.size(); ++g)
      if (patterns[g][s] == '1') segment_groups_[s].push_back(static_cast<int>(g));
}

long CooccurrenceGroups::count(int group_a, int group_b, int s) const {
  long total = 0;
  for (const auto& [la, ha] : times_[group_a])
    for (const auto& [lb, hb] : times_[group_b]) {
      const long lo = std::max(lb, la - s);
      const long hi = std::min(hb, ha - s);
      if (hi > lo) total += hi - lo;
    }
  return total;
}

PairSet co_observed_pairs(const CooccurrenceGroups& groups, int p, int s) {
  PairSet out;
  out.lag = s;
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      if (groups.pair_count(i, j, s) > 1) out.pairs.emplace_back(i, j);
  return out;
}

PairSet sample_co_observed_pairs(const CooccurrenceGroups& groups, int p,
                                 int s, std::size_t max_pairs, Rng& rng) {
  PairSet out;
  out.lag = s;
  if (static_cast<long>(p) * p <= static_cast<long>(4 * max_pairs)) {
    out = co_observed_pairs(groups, p, s);
    if (out.pairs.size() > max_pairs) {
      std::shuffle(out.pairs.begin(), out.pairs.end(), rng);
      out.pairs.resize(max_pairs);
    }
    return out;
  }
  std::uniform_int_distribution<int> pick(0, p - 1);
  std::unordered_set<long> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 100 * max_pairs + 1000;
  while (out.pairs.size() < max_pairs && attempts++ < max_attempts) {
    const int i = pick(rng), j = pick(rng);
    const long key = static_cast<long>(i) * p + j;
    if (seen.count(key)) continue;
    if (groups.pair_count(i, j, s) > 1) {
      seen.insert(key);
      out.pairs.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<std::pair<int, int>> sample_never_co_observed_pairs(
    const CooccurrenceGroups& groups, int p, int s, std::size_t max_pairs,
    Rng& rng) {
  std::vector<std::pair<int, int>> out;
  std::uniform_int_distribution<int> pick(0, p - 1);
  std::unordered_set<long> seen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 200 * max_pairs + 1000;
  while (out.size() < max_pairs && attempts++ < max_attempts) {
    const int i = pick(rng), j = pick(rng);
    const long key = static_cast<long>(i) * p + j;
    if (seen.count(key)) continue;
    if (groups.pair_count(i, j, s) == 0) {
      seen.insert(key);
      out.emplace_back(i, j);
    }
  }
  return out;
}

MaskedTimeSeries MaskedTimeSeries::from_raw(MatrixXd Y, ObservationScheme scheme) {
  if (Y.rows() != scheme.T() || Y.cols() != scheme.p())
    throw ConfigError("masked series: data does not match scheme dimensions");
  MaskedTimeSeries data;
  data.Y = std::move(Y);
  data.scheme = std::move(scheme);
  const int p = data.scheme.p();
  data.per_variable_mean = VectorXd::Zero(p);
  data.observed_variance = VectorXd::Zero(p);
  data.observed_count.assign(p, 0);

  VectorXd sum = VectorXd::Zero(p), sumsq = VectorXd::Zero(p);
  const auto& segments = data.scheme.segments();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    const long len = seg.t_end - seg.t_begin;
    for (int i : data.scheme.observed_indices(static_cast<int>(s))) {
      const auto col = data.Y.col(i).segment(seg.t_begin, len);
      sum(i) += col.sum();
      sumsq(i) += col.squaredNorm();
      data.observed_count[i] += len;
    }
  }
  for (int i = 0; i < p; ++i) {
    const long c = data.observed_count[i];
    if (c > 0) data.per_variable_mean(i) = sum(i) / c;
    if (c > 1)
      data.observed_variance(i) =
          std::max(0.0, (sumsq(i) - c * data.per_variable_mean(i) *
                                        data.per_variable_mean(i)) /
                            (c - 1));
  }
  return data;
}

std::vector<double> empirical_lagged_cov(const MaskedTimeSeries& data, int s,
                                         const PairSet& pairs,
                                         const CooccurrenceGroups& groups) {
  std::vector<double> out;
  out.reserve(pairs.pairs.size());
  const auto& segments = data.scheme.segments();
  for (const auto& [i, j] : pairs.pairs) {
    const long count = groups.pair_count(i, j, s);
    if (count <= 1)
      throw NumericalError("empirical_lagged_cov: pair co-observed at most once");
    const double mi = data.per_variable_mean(i);
    const double mj = data.per_variable_mean(j);
    double acc = 0.0;
    for (std::size_t sa = 0; sa < segments.size(); ++sa) {
      if (!data.scheme.segment_contains(static_cast<int>(sa), i)) continue;
      for (std::size_t sb = 0; sb < segments.size(); ++sb) {
        if (!data.scheme.segment_contains(static_cast<int>(sb), j)) continue;
        const long lo = std::max(segments[sb].t_begin, segments[sa].t_begin - s);
        const long hi = std::min(segments[sb].t_end, segments[sa].t_end - s);
        if (hi <= lo) continue;
        const long len = hi - lo;
        const auto yi = data.Y.col(i).segment(lo + s, len);
        const auto yj = data.Y.col(j).segment(lo, len);
        acc += yi.dot(yj) - mi * yj.sum() - mj * yi.sum() + len * mi * mj;
      }
    }
    out.push_back(acc / (count - 1));
  }
  return out;
}

}  // namespace stitch
