#pragma once

#include <limits>
#include <span>
#include <vector>

#include "onramp/tskm/dtw.hpp"

namespace onramp::tskm {

/// Sum of squared DTW distances from `center` to every member.
inline double dba_objective(const Series& center, std::span<const Series* const> members, const DtwOptions& opt = {}) {
  double s = 0.0;
  for (const auto* m : members) s += dtw_cost(center, *m, opt);
  return s;
}

/// Index (into members) of the member with the smallest objective; ties go low.
inline std::size_t medoid_index(std::span<const Series* const> members, const DtwOptions& opt = {}) {
  if (members.empty()) throw InputError("medoid: no members");
  const std::size_t n = members.size();
  std::vector<double> total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = dtw_cost(*members[i], *members[j], opt);
      total[i] += c;
      total[j] += c;
    }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (total[i] < total[best]) best = i;
  return best;
}

struct DbaResult {
  Series centroid;
  std::vector<double> objective;  ///< per iteration, starting with the initial series
};

/// DTW barycenter averaging starting from `init`. Returns the best iterate.
inline DbaResult dba_refine(Series init, std::span<const Series* const> members, std::size_t iterations,
                            const DtwOptions& opt = {}) {
  DbaResult r;
  r.centroid = std::move(init);
  double best = dba_objective(r.centroid, members, opt);
  r.objective.push_back(best);
  const std::size_t L = r.centroid.size();
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<Behavior> sum(L, Behavior{});
    std::vector<std::size_t> count(L, 0);
    for (const auto* m : members) {
      const auto al = dtw_distance(r.centroid, *m, opt);
      for (const auto& [ci, mi] : al.path) {
        for (std::size_t d = 0; d < kBehaviorDim; ++d) sum[ci][d] += (*m)[mi][d];
        ++count[ci];
      }
    }
    Series next(L);
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t d = 0; d < kBehaviorDim; ++d) next[k][d] = sum[k][d] / static_cast<double>(count[k]);
    const double obj = dba_objective(next, members, opt);
    if (!(obj < best)) break;
    best = obj;
    r.centroid = std::move(next);
    r.objective.push_back(best);
  }
  return r;
}

/// DBA centroid of `target_length` frames initialized at the resampled medoid.
/// A single member is returned resampled.
inline DbaResult dba_centroid(std::span<const Series* const> members, std::size_t target_length,
                              std::size_t iterations = 10, const DtwOptions& opt = {}) {
  if (members.empty()) throw InputError("dba_centroid: no members");
  if (members.size() == 1) {
    DbaResult r;
    r.centroid = resample(*members[0], target_length);
    r.objective.push_back(dba_objective(r.centroid, members, opt));
    return r;
  }
  const std::size_t med = medoid_index(members, opt);
  return dba_refine(resample(*members[med], target_length), members, iterations, opt);
}

inline DbaResult dba_centroid(const std::vector<Series>& members, std::size_t target_length,
                              std::size_t iterations = 10, const DtwOptions& opt = {}) {
  std::vector<const Series*> ptr;
  for (const auto& m : members) ptr.push_back(&m);
  return dba_centroid(std::span<const Series* const>(ptr), target_length, iterations, opt);
}

}  // namespace onramp::tskm
