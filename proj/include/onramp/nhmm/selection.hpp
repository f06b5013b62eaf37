#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "onramp/nhmm/gibbs.hpp"
#include "onramp/random.hpp"

namespace onramp::nhmm {

/// Free parameters: per-state mean (4) and covariance (10), intercepts of the
/// K-1 non-reference targets for each of K sources, K-1 weight vectors over
/// the active covariates, and K-1 for pi0.
inline std::size_t parameter_count(int K, std::size_t active_covariates) {
  const auto k = static_cast<std::size_t>(K);
  return 14 * k + (k - 1) * k + (k - 1) * active_covariates + (k - 1);
}

inline double total_loglik(const NhmmParams& p, const CovariateScaler& scaler, std::span<const ObservedSequence> seqs) {
  double ll = 0.0;
  for (const auto& s : seqs) {
    std::vector<Covariates> z;
    z.reserve(s.X.size());
    for (const auto& x : s.X) z.push_back(scaler.apply(x));
    ll += sequence_loglik(p, s.O, z);
  }
  return ll;
}

struct BicRow {
  int K = 0;
  double loglik = 0.0;
  std::size_t parameters = 0;
  double bic = 0.0;
  bool degenerate = false;
};

/// BIC evaluated at the posterior-mean parameters. T counts all frames.
inline BicRow bic(const PosteriorSamples& samples, std::span<const ObservedSequence> seqs) {
  BicRow r;
  r.K = samples.K;
  r.degenerate = samples.chain.degenerate_state;
  r.loglik = total_loglik(samples.posterior_mean(), samples.scaler, seqs);
  r.parameters = parameter_count(samples.K, samples.scaler.active_count());
  r.bic = -2.0 * r.loglik + static_cast<double>(r.parameters) * std::log(static_cast<double>(samples.total_length()));
  return r;
}

struct Selection {
  int best_K = 0;
  std::vector<BicRow> table;
  PosteriorSamples best;
};

/// Fits every K in [k_min, k_max] with seed derive_seed(cfg.seed, K) and picks
/// the lowest BIC among fits without a degenerate state. Ties go to smaller K.
inline Selection select_K(std::span<const ObservedSequence> seqs, const FitConfig& cfg, int k_min = 1, int k_max = 6) {
  if (k_min < 1 || k_max < k_min) throw InputError("select_K: invalid K range");
  Selection out;
  std::optional<double> best_bic;
  for (int K = k_min; K <= k_max; ++K) {
    FitConfig c = cfg;
    c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(K));
    PosteriorSamples s = gibbs_fit(seqs, K, c);
    const BicRow row = bic(s, seqs);
    out.table.push_back(row);
    if (row.degenerate) continue;
    if (!best_bic || row.bic < *best_bic) {
      best_bic = row.bic;
      out.best_K = K;
      out.best = std::move(s);
    }
  }
  if (!best_bic) throw ModelStateError("select_K: every candidate K produced a degenerate state");
  return out;
}

inline Selection select_K(const MergeEvent& event, const FitConfig& cfg, int k_min = 1, int k_max = 6) {
  const ObservedSequence s = observed(event);
  return select_K(std::span<const ObservedSequence>(&s, 1), cfg, k_min, k_max);
}

/// Sample quantile, linear interpolation between order statistics (type 7).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InputError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct CoefficientSummary {
  int state = 0;           ///< 0-based target state of the logit
  std::size_t covariate = 0;
  bool active = true;
  double mean = 0.0;       ///< standardized scale
  double lower = 0.0;
  double upper = 0.0;
  double mean_raw = 0.0;   ///< per unit of the raw covariate
  double lower_raw = 0.0;
  double upper_raw = 0.0;
  bool significant = false;
};

inline constexpr std::size_t kMinDrawsForIntervals = 100;

/// Equal-tailed credible intervals for every non-reference covariate weight.
inline std::vector<CoefficientSummary> covariate_significance(const PosteriorSamples& s, double level) {
  if (s.draws.size() < kMinDrawsForIntervals)
    throw InputError("covariate_significance: need at least " + std::to_string(kMinDrawsForIntervals) + " retained draws");
  if (!(level > 0.0 && level < 1.0)) throw InputError("covariate_significance: level must be in (0, 1)");
  const double a = 0.5 * (1.0 - level);
  std::vector<CoefficientSummary> out;
  for (int j = 0; j + 1 < s.K; ++j) {
    for (std::size_t c = 0; c < kCovariateDim; ++c) {
      CoefficientSummary r;
      r.state = j;
      r.covariate = c;
      r.active = s.scaler.active[c];
      if (r.active) {
        std::vector<double> v;
        v.reserve(s.draws.size());
        for (const auto& d : s.draws) v.push_back(d.rho(j, static_cast<Eigen::Index>(c)));
        double sum = 0.0;
        for (double x : v) sum += x;
        r.mean = sum / static_cast<double>(v.size());
        r.lower = quantile(v, a);
        r.upper = quantile(v, 1.0 - a);
        const double sd = s.scaler.sd[c];
        r.mean_raw = r.mean / sd;
        r.lower_raw = r.lower / sd;
        r.upper_raw = r.upper / sd;
        r.significant = r.lower > 0.0 || r.upper < 0.0;
      }
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace onramp::nhmm
