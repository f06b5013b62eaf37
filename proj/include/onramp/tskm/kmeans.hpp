#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "onramp/random.hpp"
#include "onramp/tskm/dba.hpp"

namespace onramp::tskm {

/// Per-dimension z-scoring with statistics pooled over every frame of every series.
struct FeatureScaler {
  Behavior mean{};
  Behavior sd{1, 1, 1, 1};

  static FeatureScaler fit(std::span<const Series> data) {
    FeatureScaler s;
    std::size_t n = 0;
    Behavior sum{};
    for (const auto& x : data)
      for (const auto& o : x) {
        ++n;
        for (std::size_t d = 0; d < kBehaviorDim; ++d) sum[d] += o[d];
      }
    if (n == 0) return s;
    for (std::size_t d = 0; d < kBehaviorDim; ++d) s.mean[d] = sum[d] / static_cast<double>(n);
    Behavior ss{};
    for (const auto& x : data)
      for (const auto& o : x)
        for (std::size_t d = 0; d < kBehaviorDim; ++d) ss[d] += (o[d] - s.mean[d]) * (o[d] - s.mean[d]);
    for (std::size_t d = 0; d < kBehaviorDim; ++d) {
      const double v = n > 1 ? std::sqrt(ss[d] / static_cast<double>(n - 1)) : 0.0;
      s.sd[d] = v > 1e-12 ? v : 1.0;
    }
    return s;
  }

  Series apply(const Series& x) const {
    Series out(x.size());
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t d = 0; d < kBehaviorDim; ++d) out[t][d] = (x[t][d] - mean[d]) / sd[d];
    return out;
  }

  Series invert(const Series& z) const {
    Series out(z.size());
    for (std::size_t t = 0; t < z.size(); ++t)
      for (std::size_t d = 0; d < kBehaviorDim; ++d) out[t][d] = z[t][d] * sd[d] + mean[d];
    return out;
  }
};

struct TskmOptions {
  std::size_t max_iter = 50;
  std::size_t restarts = 3;
  std::size_t dba_iterations = 10;
  DtwOptions dtw;
};

/// Result of DTW K-means on already-scaled series.
struct ClusterModel {
  int k_clusters = 0;
  std::vector<Series> centroids;
  std::vector<int> assignments;      ///< 0-based cluster per input series
  double inertia = 0.0;              ///< sum of squared DTW distances to assigned centroids
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
  std::size_t restart = 0;           ///< which restart produced this model
};

namespace detail {

struct Assignment {
  std::vector<int> labels;
  std::vector<double> cost;
  double total = 0.0;
};

inline Assignment assign(std::span<const Series> data, const std::vector<Series>& centroids, const DtwOptions& opt) {
  Assignment a;
  a.labels.resize(data.size());
  a.cost.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    int arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double v = dtw_cost(data[i], centroids[c], opt);
      if (v < best) {
        best = v;
        arg = static_cast<int>(c);
      }
    }
    a.labels[i] = arg;
    a.cost[i] = best;
  }
  for (double c : a.cost) a.total += c;
  return a;
}

// Farthest-point seeding from a random first series.
inline std::vector<Series> seed_centroids(std::span<const Series> data, int k, Random& rng, const DtwOptions& opt) {
  const std::size_t n = data.size();
  std::vector<Series> c;
  std::vector<bool> used(n, false);
  std::size_t first = rng.uniform_index(n);
  c.push_back(data[first]);
  used[first] = true;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(c.size()) < k) {
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dtw_cost(data[i], c.back(), opt));
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!used[i] && (arg == n || nearest[i] > nearest[arg])) arg = i;
    used[arg] = true;
    c.push_back(data[arg]);
  }
  return c;
}

inline std::size_t median_length(const std::vector<const Series*>& members) {
  std::vector<std::size_t> len;
  for (const auto* m : members) len.push_back(m->size());
  std::sort(len.begin(), len.end());
  return len[(len.size() - 1) / 2];  // lower median
}

// Lloyd iterations from given centroids.
inline ClusterModel lloyd(std::span<const Series> data, std::vector<Series> centroids, const TskmOptions& opt) {
  const auto k = static_cast<int>(centroids.size());
  ClusterModel m;
  m.k_clusters = k;
  std::vector<int> previous;
  Assignment a;
  bool stale = false;  // labels edited by a reseed since the last assignment
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    a = assign(data, centroids, opt.dtw);
    m.inertia_history.push_back(a.total);
    m.iterations = it + 1;
    stale = false;

    // Reseed empty clusters with the series farthest from its own centroid.
    std::vector<std::size_t> size(static_cast<std::size_t>(k), 0);
    for (int l : a.labels) ++size[static_cast<std::size_t>(l)];
    bool reseeded = false;
    for (int c = 0; c < k; ++c) {
      if (size[static_cast<std::size_t>(c)] > 0) continue;
      std::size_t far = data.size();
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (size[static_cast<std::size_t>(a.labels[i])] < 2) continue;
        if (far == data.size() || a.cost[i] > a.cost[far]) far = i;
      }
      if (far == data.size()) continue;
      --size[static_cast<std::size_t>(a.labels[far])];
      a.total -= a.cost[far];
      a.labels[far] = c;
      a.cost[far] = 0.0;
      size[static_cast<std::size_t>(c)] = 1;
      centroids[static_cast<std::size_t>(c)] = data[far];
      reseeded = true;
      stale = true;
    }

    if (!reseeded && a.labels == previous) break;
    previous = a.labels;
    if (it + 1 == opt.max_iter) break;

    for (int c = 0; c < k; ++c) {
      std::vector<const Series*> members;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (a.labels[i] == c) members.push_back(&data[i]);
      if (members.empty()) continue;
      const std::span<const Series* const> ms(members);
      Series& cur = centroids[static_cast<std::size_t>(c)];
      double best = dba_objective(cur, ms, opt.dtw);
      DbaResult fresh = dba_centroid(ms, median_length(members), opt.dba_iterations, opt.dtw);
      if (fresh.objective.back() < best) {
        best = fresh.objective.back();
        cur = std::move(fresh.centroid);
      }
      DbaResult warm = dba_refine(cur, ms, opt.dba_iterations, opt.dtw);
      if (warm.objective.back() < best) cur = std::move(warm.centroid);
    }
  }
  if (stale) {
    a = assign(data, centroids, opt.dtw);
    m.inertia_history.push_back(a.total);
  }
  m.centroids = std::move(centroids);
  m.assignments = std::move(a.labels);
  m.inertia = a.total;
  return m;
}

}  // namespace detail

/// DTW K-means. Best of `restarts` farthest-point seedings; restart r uses
/// derive_seed(seed, r).
inline ClusterModel fit_tskm(std::span<const Series> data, int k, std::uint64_t seed, const TskmOptions& opt = {}) {
  if (k < 1) throw InputError("fit_tskm: k must be >= 1");
  if (data.size() < static_cast<std::size_t>(k))
    throw InputError("fit_tskm: " + std::to_string(data.size()) + " series for " + std::to_string(k) + " clusters");
  for (const auto& s : data)
    if (s.empty()) throw InputError("fit_tskm: empty series");
  std::optional<ClusterModel> best;
  for (std::size_t r = 0; r < std::max<std::size_t>(opt.restarts, 1); ++r) {
    Random rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    ClusterModel m = detail::lloyd(data, detail::seed_centroids(data, k, rng, opt.dtw), opt);
    m.restart = r;
    if (!best || m.inertia < best->inertia) best = std::move(m);
  }
  return *best;
}

struct InertiaRow {
  int k = 0;
  double lambda_w = 0.0;
  std::optional<double> change_rate;
};

struct InertiaCurve {
  std::vector<InertiaRow> rows;
  int suggested_k = 0;
  std::vector<ClusterModel> models;
};

/// lambda_w over k. Each k also tries a warm start from the previous k's
/// centroids plus the worst-fit series, which keeps the curve monotone.
/// The suggested k is the last k before the change rate first drops below
/// `threshold`; the largest k if it never does.
inline InertiaCurve inertia_curve(std::span<const Series> data, std::vector<int> ks, std::uint64_t seed,
                                  const TskmOptions& opt = {}, double threshold = 0.05) {
  if (ks.empty()) throw InputError("inertia_curve: empty k range");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  InertiaCurve out;
  for (std::size_t idx = 0; idx < ks.size(); ++idx) {
    const int k = ks[idx];
    ClusterModel m = fit_tskm(data, k, seed, opt);
    if (idx > 0 && ks[idx - 1] == k - 1) {
      const ClusterModel& prev = out.models.back();
      std::vector<Series> init = prev.centroids;
      std::size_t worst = 0;
      double worst_cost = -1.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double c = dtw_cost(data[i], prev.centroids[static_cast<std::size_t>(prev.assignments[i])], opt.dtw);
        if (c > worst_cost) {
          worst_cost = c;
          worst = i;
        }
      }
      init.push_back(data[worst]);
      ClusterModel warm = detail::lloyd(data, std::move(init), opt);
      warm.restart = opt.restarts;
      if (warm.inertia < m.inertia) m = std::move(warm);
    }
    InertiaRow row;
    row.k = k;
    row.lambda_w = m.inertia;
    if (idx > 0) {
      const double prev = out.rows.back().lambda_w;
      row.change_rate = prev > 0.0 ? (prev - m.inertia) / prev : 0.0;
    }
    out.rows.push_back(row);
    out.models.push_back(std::move(m));
  }
  out.suggested_k = out.rows.back().k;
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    if (*out.rows[i].change_rate < threshold) {
      out.suggested_k = out.rows[i - 1].k;
      break;
    }
  return out;
}

struct PatternSummary {
  int cluster = 0;
  std::size_t count = 0;
  double share = 0.0;
  Series centroid;      ///< unscaled
  Behavior signature{}; ///< per-dimension mean of the unscaled centroid
  double duration_min = 0.0;
  double duration_max = 0.0;
  double duration_mean = 0.0;
  double duration_median = 0.0;
};

inline std::vector<PatternSummary> summarize_patterns(const ClusterModel& model, std::span<const Series> data,
                                                      const FeatureScaler& scaler = {}) {
  std::vector<PatternSummary> out;
  for (int c = 0; c < model.k_clusters; ++c) {
    PatternSummary p;
    p.cluster = c;
    std::vector<double> len;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (model.assignments[i] == c) len.push_back(static_cast<double>(data[i].size()));
    p.count = len.size();
    p.share = data.empty() ? 0.0 : static_cast<double>(p.count) / static_cast<double>(data.size());
    p.centroid = scaler.invert(model.centroids[static_cast<std::size_t>(c)]);
    for (const auto& o : p.centroid)
      for (std::size_t d = 0; d < kBehaviorDim; ++d) p.signature[d] += o[d];
    for (auto& v : p.signature) v /= static_cast<double>(p.centroid.size());
    if (!len.empty()) {
      std::sort(len.begin(), len.end());
      p.duration_min = len.front();
      p.duration_max = len.back();
      double s = 0.0;
      for (double l : len) s += l;
      p.duration_mean = s / static_cast<double>(len.size());
      const std::size_t h = len.size() / 2;
      p.duration_median = len.size() % 2 ? len[h] : 0.5 * (len[h - 1] + len[h]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InputError("adjusted_rand_index: label vectors differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return 0.5 * x * (x - 1.0); };
  double sj = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : joint) sj += c2(v);
  for (const auto& [key, v] : ra) sa += c2(v);
  for (const auto& [key, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double maximum = 0.5 * (sa + sb);
  if (maximum == expected) return 1.0;
  return (sj - expected) / (maximum - expected);
}

}  // namespace onramp::tskm
