#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "onramp/common.hpp"

namespace onramp::tskm {

using Series = std::vector<Behavior>;

struct DtwOptions {
  /// Sakoe-Chiba radius in frames; widened to |len_a - len_b| so a path always exists.
  std::optional<std::size_t> band;
};

struct DtwAlignment {
  double distance = 0.0;  ///< sqrt(cost)
  double cost = 0.0;      ///< summed squared pointwise distances along the path
  std::vector<std::pair<std::size_t, std::size_t>> path;  ///< 0-based, from (0,0) to (n-1,m-1)
};

inline double squared_distance(const Behavior& a, const Behavior& b) {
  double s = 0.0;
  for (std::size_t d = 0; d < kBehaviorDim; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

namespace detail {
inline void check_series(const Series& a, const Series& b) {
  if (a.empty() || b.empty()) throw InputError("dtw: series must be non-empty");
  for (const Series* s : {&a, &b})
    for (const auto& o : *s)
      if (!all_finite(o)) throw InputError("dtw: series values must be finite");
}
inline std::size_t band_radius(const Series& a, const Series& b, const DtwOptions& opt) {
  const std::size_t diff = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
  return opt.band ? std::max(*opt.band, diff) : std::numeric_limits<std::size_t>::max();
}
inline bool in_band(std::size_t i, std::size_t j, std::size_t r) { return (i > j ? i - j : j - i) <= r; }
}  // namespace detail

/// Optimal alignment cost only; two-row dynamic program.
inline double dtw_cost(const Series& a, const Series& b, const DtwOptions& opt = {}) {
  detail::check_series(a, b);
  const std::size_t n = a.size(), m = b.size();
  const std::size_t r = detail::band_radius(a, b, opt);
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m, inf), cur(m, inf);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(cur.begin(), cur.end(), inf);
    for (std::size_t j = 0; j < m; ++j) {
      if (!detail::in_band(i, j, r)) continue;
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0) best = std::min(best, prev[j]);
        if (j > 0) best = std::min(best, cur[j - 1]);
        if (i > 0 && j > 0) best = std::min(best, prev[j - 1]);
      }
      cur[j] = best + squared_distance(a[i], b[j]);
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

/// Optimal alignment with its warping path.
inline DtwAlignment dtw_distance(const Series& a, const Series& b, const DtwOptions& opt = {}) {
  detail::check_series(a, b);
  const std::size_t n = a.size(), m = b.size();
  const std::size_t r = detail::band_radius(a, b, opt);
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> D(n * m, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return D[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (!detail::in_band(i, j, r)) continue;
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = inf;
        if (i > 0) best = std::min(best, at(i - 1, j));
        if (j > 0) best = std::min(best, at(i, j - 1));
        if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
      }
      at(i, j) = best + squared_distance(a[i], b[j]);
    }
  DtwAlignment out;
  out.cost = at(n - 1, m - 1);
  out.distance = std::sqrt(out.cost);
  // Backtrack, preferring the diagonal on ties.
  std::size_t i = n - 1, j = m - 1;
  out.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double d = at(i - 1, j - 1), u = at(i - 1, j), l = at(i, j - 1);
      if (d <= u && d <= l) {
        --i;
        --j;
      } else if (u <= l) {
        --i;
      } else {
        --j;
      }
    }
    out.path.emplace_back(i, j);
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

/// Linear-interpolation resampling to `length` frames; endpoints preserved.
inline Series resample(const Series& s, std::size_t length) {
  if (s.empty()) throw InputError("resample: empty series");
  if (length == 0) throw InputError("resample: target length must be positive");
  Series out(length);
  if (length == 1 || s.size() == 1) {
    std::fill(out.begin(), out.end(), s.front());
    return out;
  }
  const double scale = static_cast<double>(s.size() - 1) / static_cast<double>(length - 1);
  for (std::size_t k = 0; k < length; ++k) {
    const double u = static_cast<double>(k) * scale;
    const auto lo = std::min(static_cast<std::size_t>(std::floor(u)), s.size() - 1);
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const double w = u - static_cast<double>(lo);
    for (std::size_t d = 0; d < kBehaviorDim; ++d) out[k][d] = (1.0 - w) * s[lo][d] + w * s[hi][d];
  }
  out.back() = s.back();
  return out;
}

}  // namespace onramp::tskm
