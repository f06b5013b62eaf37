#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "onramp/merge_extractor.hpp"
#include "onramp/nhmm/likelihood.hpp"
#include "onramp/nhmm/params.hpp"
#include "onramp/nhmm/polya_gamma.hpp"
#include "onramp/random.hpp"

namespace onramp::nhmm {

struct FitConfig {
  std::size_t iterations = 4000;
  std::size_t burn_in = 2000;
  std::size_t thinning = 2;
  /// Prior on each state mean has covariance mean_prior_scale * data covariance.
  double mean_prior_scale = 4.0;
  /// Inverse-Wishart degrees of freedom; the scale is chosen so E[Sigma] = data covariance.
  double sigma_prior_dof = 6.0;
  double coef_prior_sd = 5.0;
  double pi0_concentration = 1.0;
  double credible_level = 0.95;
  std::uint64_t seed = 1;
  bool standardize_covariates = true;
  std::size_t degenerate_after = 50;
  std::size_t min_sequence_length = 10;

  void validate() const {
    if (burn_in >= iterations) throw InputError("FitConfig: burn_in must be < iterations");
    if (thinning < 1) throw InputError("FitConfig: thinning must be >= 1");
    if (!(credible_level > 0.0 && credible_level < 1.0)) throw InputError("FitConfig: credible_level must be in (0, 1)");
    if (!(sigma_prior_dof > 5.0)) throw InputError("FitConfig: sigma_prior_dof must exceed 5 for a 4-dim emission");
  }
};

struct ObservedSequence {
  std::span<const Behavior> O;
  std::span<const Covariates> X;  ///< raw scale; the fit standardizes internally
};

inline ObservedSequence observed(const MergeEvent& e) { return {e.O, e.X}; }

struct ChainInfo {
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::size_t burn_in = 0;
  std::size_t thinning = 1;
  bool degenerate_state = false;
  int degenerate_state_index = -1;
  std::vector<std::string> warnings;
};

/// Retained draws of one chain, relabeled so state labels ascend with the
/// posterior mean longitudinal speed of each draw.
struct PosteriorSamples {
  int K = 1;
  std::vector<NhmmParams> draws;
  std::vector<std::vector<std::uint8_t>> states;  ///< per draw, concatenated over sequences
  std::vector<std::size_t> offsets{0};            ///< sequence boundaries into `states[d]`
  CovariateScaler scaler;
  ChainInfo chain;

  std::size_t sequence_count() const { return offsets.size() - 1; }
  std::size_t total_length() const { return offsets.back(); }

  NhmmParams posterior_mean() const {
    if (draws.empty()) throw InputError("posterior_mean: no retained draws");
    NhmmParams m = NhmmParams::zeros(K);
    m.pi0.setZero();
    for (auto& s : m.sigma) s.setZero();
    for (const auto& d : draws) {
      for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
        m.mu[k] += d.mu[k];
        m.sigma[k] += d.sigma[k];
      }
      m.xi += d.xi;
      m.rho += d.rho;
      m.pi0 += d.pi0;
    }
    const double n = static_cast<double>(draws.size());
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
      m.mu[k] /= n;
      m.sigma[k] /= n;
    }
    m.xi /= n;
    m.rho /= n;
    m.pi0 /= m.pi0.sum();
    return m;
  }
};

namespace detail {

inline Vec4 draw_mvn(const Vec4& mean, const Mat4& cov, Random& rng) {
  Eigen::LLT<Mat4> llt(cov);
  if (llt.info() != Eigen::Success) throw ModelStateError("covariance draw is not positive definite");
  Vec4 z;
  for (int i = 0; i < 4; ++i) z[i] = rng.normal();
  return mean + llt.matrixL() * z;
}

// Sigma ~ Inverse-Wishart(dof, scale) via the Bartlett decomposition of its inverse.
inline Mat4 draw_inverse_wishart(double dof, const Mat4& scale, Random& rng) {
  Eigen::LLT<Mat4> llt(scale.inverse());
  if (llt.info() != Eigen::Success) throw ModelStateError("inverse-Wishart scale is not positive definite");
  Mat4 a = Mat4::Zero();
  for (int i = 0; i < 4; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Mat4 m = Mat4(llt.matrixL()) * a;
  const Mat4 w = m * m.transpose();
  Mat4 sigma = w.inverse();
  return 0.5 * (sigma + sigma.transpose());
}

// Lloyd's k-means with k-means++ seeding; starting labels for the chain.
inline std::vector<int> kmeans_labels(const std::vector<Vec4>& pts, int K, Random& rng, int iterations = 25) {
  const std::size_t n = pts.size();
  std::vector<int> labels(n, 0);
  if (K == 1 || n == 0) return labels;
  std::vector<Vec4> centers;
  centers.push_back(pts[rng.uniform_index(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < K) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, (pts[i] - c).squaredNorm());
      d2[i] = best;
    }
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    centers.push_back(total > 0.0 ? pts[rng.categorical(d2)] : pts[rng.uniform_index(n)]);
  }
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int arg = 0;
      double best = (pts[i] - centers[0]).squaredNorm();
      for (int k = 1; k < K; ++k) {
        const double v = (pts[i] - centers[static_cast<std::size_t>(k)]).squaredNorm();
        if (v < best) {
          best = v;
          arg = k;
        }
      }
      if (labels[i] != arg || it == 0) changed = changed || labels[i] != arg;
      labels[i] = arg;
    }
    std::vector<Vec4> sums(static_cast<std::size_t>(K), Vec4::Zero());
    std::vector<std::size_t> counts(static_cast<std::size_t>(K), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(labels[i])] += pts[i];
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k)
      if (counts[k] > 0) centers[k] = sums[k] / static_cast<double>(counts[k]);
    if (!changed && it > 0) break;
  }
  return labels;
}

/// Permutation listing the chain's states in canonical order.
inline std::vector<int> canonical_order(const NhmmParams& p) {
  std::vector<int> order(static_cast<std::size_t>(p.K));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return p.mu[static_cast<std::size_t>(a)][kLongitudinalSpeed] < p.mu[static_cast<std::size_t>(b)][kLongitudinalSpeed];
  });
  return order;
}

/// Relabels states so that new state n is old state order[n]; logits are
/// re-zeroed on the new reference state.
inline NhmmParams permute_states(const NhmmParams& p, const std::vector<int>& order) {
  NhmmParams out = NhmmParams::zeros(p.K);
  for (int a = 0; a < p.K; ++a) {
    const int oa = order[static_cast<std::size_t>(a)];
    out.mu[static_cast<std::size_t>(a)] = p.mu[static_cast<std::size_t>(oa)];
    out.sigma[static_cast<std::size_t>(a)] = p.sigma[static_cast<std::size_t>(oa)];
    out.pi0[a] = p.pi0[oa];
    out.rho.row(a) = p.rho.row(oa);
    for (int b = 0; b < p.K; ++b) out.xi(a, b) = p.xi(oa, order[static_cast<std::size_t>(b)]);
  }
  out.rezero_reference();
  return out;
}

}  // namespace detail

/// Direct-Gibbs posterior sampler for one or more sequences sharing parameters.
///
/// Each sweep draws, in turn: emission parameters from their conjugate
/// Normal-Inverse-Wishart conditionals; the logit coefficients of every
/// non-reference state with Polya-Gamma augmentation; pi0 from its Dirichlet
/// conditional; and finally every q_t from its full conditional given
/// q_{t-1}, q_{t+1}, o_t, x_t and x_{t+1}.
inline PosteriorSamples gibbs_fit(std::span<const ObservedSequence> sequences, int K, const FitConfig& cfg,
                                  const CovariateScaler* fixed_scaler = nullptr) {
  cfg.validate();
  if (K < 1 || K > 255) throw InputError("gibbs_fit: K must be in 1..255");
  if (sequences.empty()) throw InputError("gibbs_fit: no sequences");
  for (const auto& s : sequences) {
    if (s.O.size() != s.X.size()) throw InputError("gibbs_fit: O and X lengths differ");
    if (s.O.size() < cfg.min_sequence_length)
      throw InputError("gibbs_fit: sequence shorter than " + std::to_string(cfg.min_sequence_length) + " frames");
    for (const auto& o : s.O)
      if (!all_finite(o)) throw InputError("gibbs_fit: non-finite behavior value");
    for (const auto& x : s.X)
      if (!all_finite(x)) throw InputError("gibbs_fit: non-finite covariate value");
  }

  PosteriorSamples out;
  out.K = K;
  out.chain.seed = cfg.seed;
  out.chain.iterations = cfg.iterations;
  out.chain.burn_in = cfg.burn_in;
  out.chain.thinning = cfg.thinning;

  // Covariate scaling.
  std::vector<std::vector<Covariates>> raw_x;
  for (const auto& s : sequences) raw_x.emplace_back(s.X.begin(), s.X.end());
  std::vector<const std::vector<Covariates>*> xptr;
  for (const auto& v : raw_x) xptr.push_back(&v);
  if (fixed_scaler) {
    out.scaler = *fixed_scaler;
  } else if (cfg.standardize_covariates) {
    out.scaler = CovariateScaler::fit(xptr);
  } else {
    out.scaler = CovariateScaler::detect_constant(xptr);
  }
  for (const auto& name : out.scaler.dropped_names())
    out.chain.warnings.push_back("covariate '" + name + "' is constant and was dropped from the regression");

  // Flattened data.
  std::vector<Vec4> obs;
  std::vector<CovVec> xz;
  std::vector<std::size_t>& offsets = out.offsets;
  offsets.assign(1, 0);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t t = 0; t < sequences[s].O.size(); ++t) {
      obs.push_back(to_eigen(sequences[s].O[t]));
      xz.push_back(to_eigen(out.scaler.apply(raw_x[s][t])));
    }
    offsets.push_back(obs.size());
  }
  const std::size_t T = obs.size();
  const std::size_t nseq = sequences.size();

  std::vector<Eigen::Index> active;
  for (std::size_t c = 0; c < kCovariateDim; ++c)
    if (out.scaler.active[c]) active.push_back(static_cast<Eigen::Index>(c));
  const auto P = static_cast<Eigen::Index>(active.size());

  // Data-dependent emission prior.
  Vec4 data_mean = Vec4::Zero();
  for (const auto& o : obs) data_mean += o;
  data_mean /= static_cast<double>(T);
  Mat4 data_cov = Mat4::Zero();
  for (const auto& o : obs) data_cov += (o - data_mean) * (o - data_mean).transpose();
  data_cov /= static_cast<double>(std::max<std::size_t>(T - 1, 1));
  const double ridge = 1e-6 * std::max(data_cov.trace() / 4.0, 1e-12) + 1e-12;
  data_cov += ridge * Mat4::Identity();
  const double kappa0 = 1.0 / cfg.mean_prior_scale;
  const double nu0 = cfg.sigma_prior_dof;
  const Mat4 psi0 = (nu0 - 4.0 - 1.0) * data_cov;
  const double coef_prec = 1.0 / (cfg.coef_prior_sd * cfg.coef_prior_sd);

  Random rng(cfg.seed);
  const PolyaGammaSampler pg;

  // Initial states from k-means on per-dimension standardized observations.
  std::vector<int> q;
  {
    std::vector<Vec4> zs(T);
    const Vec4 sd = data_cov.diagonal().cwiseSqrt();
    for (std::size_t t = 0; t < T; ++t) zs[t] = (obs[t] - data_mean).cwiseQuotient(sd);
    q = detail::kmeans_labels(zs, K, rng);
  }

  NhmmParams cur = NhmmParams::zeros(K);
  std::vector<std::size_t> empty_run(static_cast<std::size_t>(K), 0);

  const auto Ki = static_cast<Eigen::Index>(K);
  const Eigen::Index D = Ki + P;
  std::vector<double> logA(T * static_cast<std::size_t>(K * K));
  Eigen::MatrixXd logb(static_cast<Eigen::Index>(T), Ki);

  const std::size_t n_keep = (cfg.iterations - cfg.burn_in) / cfg.thinning;
  out.draws.reserve(n_keep);
  out.states.reserve(n_keep);

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    // Emission parameters.
    for (int k = 0; k < K; ++k) {
      std::size_t n = 0;
      Vec4 sum = Vec4::Zero();
      for (std::size_t t = 0; t < T; ++t)
        if (q[t] == k) {
          ++n;
          sum += obs[t];
        }
      Mat4 scatter = Mat4::Zero();
      Vec4 xbar = Vec4::Zero();
      if (n > 0) {
        xbar = sum / static_cast<double>(n);
        for (std::size_t t = 0; t < T; ++t)
          if (q[t] == k) scatter += (obs[t] - xbar) * (obs[t] - xbar).transpose();
      }
      const double nn = static_cast<double>(n);
      const double kappa_n = kappa0 + nn;
      const Vec4 m_n = (kappa0 * data_mean + nn * xbar) / kappa_n;
      const Mat4 psi_n =
          psi0 + scatter + (kappa0 * nn / kappa_n) * (xbar - data_mean) * (xbar - data_mean).transpose();
      const auto ks = static_cast<std::size_t>(k);
      cur.sigma[ks] = detail::draw_inverse_wishart(nu0 + nn, psi_n, rng);
      cur.mu[ks] = detail::draw_mvn(m_n, cur.sigma[ks] / kappa_n, rng);
      empty_run[ks] = n == 0 ? empty_run[ks] + 1 : 0;
      if (empty_run[ks] > cfg.degenerate_after && !out.chain.degenerate_state) {
        out.chain.degenerate_state = true;
        out.chain.degenerate_state_index = k;
      }
    }

    // Transition coefficients, one non-reference state at a time.
    if (K > 1) {
      std::vector<int> src, dst;
      std::vector<std::size_t> when;
      for (std::size_t s = 0; s < nseq; ++s)
        for (std::size_t t = offsets[s] + 1; t < offsets[s + 1]; ++t) {
          src.push_back(q[t - 1]);
          dst.push_back(q[t]);
          when.push_back(t);
        }
      const auto N = static_cast<Eigen::Index>(src.size());
      Eigen::MatrixXd eta(N, Ki);
      for (Eigen::Index n = 0; n < N; ++n) {
        const CovVec& x = xz[when[static_cast<std::size_t>(n)]];
        for (Eigen::Index m = 0; m < Ki; ++m) eta(n, m) = cur.xi(src[static_cast<std::size_t>(n)], m) + cur.rho.row(m).dot(x);
      }
      for (Eigen::Index j = 0; j + 1 < Ki; ++j) {
        Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(D, D) * coef_prec;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(D);
        Eigen::VectorXd xa(P);
        for (Eigen::Index n = 0; n < N; ++n) {
          double mx = -std::numeric_limits<double>::infinity();
          for (Eigen::Index m = 0; m < Ki; ++m)
            if (m != j) mx = std::max(mx, eta(n, m));
          double se = 0.0;
          for (Eigen::Index m = 0; m < Ki; ++m)
            if (m != j) se += std::exp(eta(n, m) - mx);
          const double c = mx + std::log(se);
          const double psi = eta(n, j) - c;
          double w;
          try {
            w = pg.draw(psi, rng);
          } catch (const NumericalError&) {
            throw NumericalError("Polya-Gamma draw did not converge at iteration " + std::to_string(iter));
          }
          const double kappa = (dst[static_cast<std::size_t>(n)] == j ? 1.0 : 0.0) - 0.5;
          const auto i = static_cast<Eigen::Index>(src[static_cast<std::size_t>(n)]);
          const CovVec& x = xz[when[static_cast<std::size_t>(n)]];
          for (Eigen::Index a = 0; a < P; ++a) xa[a] = x[active[static_cast<std::size_t>(a)]];
          const double r = kappa + w * c;
          prec(i, i) += w;
          rhs[i] += r;
          for (Eigen::Index a = 0; a < P; ++a) {
            const double wa = w * xa[a];
            prec(i, Ki + a) += wa;
            rhs[Ki + a] += r * xa[a];
            for (Eigen::Index b = 0; b <= a; ++b) prec(Ki + a, Ki + b) += wa * xa[b];
          }
        }
        for (Eigen::Index a = 0; a < P; ++a) {
          for (Eigen::Index i = 0; i < Ki; ++i) prec(Ki + a, i) = prec(i, Ki + a);
          for (Eigen::Index b = 0; b < a; ++b) prec(Ki + b, Ki + a) = prec(Ki + a, Ki + b);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(prec);
        if (llt.info() != Eigen::Success)
          throw NumericalError("coefficient precision not positive definite at iteration " + std::to_string(iter));
        const Eigen::VectorXd mean = llt.solve(rhs);
        Eigen::VectorXd z(D);
        for (Eigen::Index d = 0; d < D; ++d) z[d] = rng.normal();
        const Eigen::VectorXd beta = mean + llt.matrixU().solve(z);
        for (Eigen::Index i = 0; i < Ki; ++i) cur.xi(i, j) = beta[i];
        cur.rho.row(j).setZero();
        for (Eigen::Index a = 0; a < P; ++a) cur.rho(j, active[static_cast<std::size_t>(a)]) = beta[Ki + a];
        for (Eigen::Index n = 0; n < N; ++n)
          eta(n, j) = cur.xi(src[static_cast<std::size_t>(n)], j) + cur.rho.row(j).dot(xz[when[static_cast<std::size_t>(n)]]);
      }
    }

    // Initial distribution.
    {
      std::vector<double> alpha(static_cast<std::size_t>(K), cfg.pi0_concentration);
      for (std::size_t s = 0; s < nseq; ++s) alpha[static_cast<std::size_t>(q[offsets[s]])] += 1.0;
      const auto d = rng.dirichlet(alpha);
      for (int k = 0; k < K; ++k) cur.pi0[k] = std::max(d[static_cast<std::size_t>(k)], 1e-300);
    }

    // Direct Gibbs state sweep.
    {
      const auto em = emission_cache(cur);
      for (std::size_t t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) logb(static_cast<Eigen::Index>(t), k) = em[static_cast<std::size_t>(k)].logdensity(obs[t]);
      const Eigen::MatrixXd rho_active = cur.rho;
      std::vector<double> u(static_cast<std::size_t>(K));
      for (std::size_t s = 0; s < nseq; ++s)
        for (std::size_t t = offsets[s] + 1; t < offsets[s + 1]; ++t) {
          for (int j = 0; j < K; ++j) u[static_cast<std::size_t>(j)] = rho_active.row(j).dot(xz[t]);
          double* row = &logA[t * static_cast<std::size_t>(K * K)];
          for (int i = 0; i < K; ++i, row += K) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < K; ++j) {
              row[j] = cur.xi(i, j) + u[static_cast<std::size_t>(j)];
              mx = std::max(mx, row[j]);
            }
            double se = 0.0;
            for (int j = 0; j < K; ++j) se += std::exp(row[j] - mx);
            const double lse = mx + std::log(se);
            for (int j = 0; j < K; ++j) row[j] -= lse;
          }
        }
      std::vector<double> lp(static_cast<std::size_t>(K));
      std::vector<double> w(static_cast<std::size_t>(K));
      const Eigen::VectorXd logpi = cur.pi0.array().log();
      for (std::size_t s = 0; s < nseq; ++s) {
        const std::size_t b = offsets[s];
        const std::size_t e = offsets[s + 1];
        for (std::size_t t = b; t < e; ++t) {
          double mx = -std::numeric_limits<double>::infinity();
          for (int k = 0; k < K; ++k) {
            double v = logb(static_cast<Eigen::Index>(t), k);
            v += t == b ? logpi[k] : logA[t * static_cast<std::size_t>(K * K) + static_cast<std::size_t>(q[t - 1] * K + k)];
            if (t + 1 < e) v += logA[(t + 1) * static_cast<std::size_t>(K * K) + static_cast<std::size_t>(k * K + q[t + 1])];
            lp[static_cast<std::size_t>(k)] = v;
            mx = std::max(mx, v);
          }
          for (int k = 0; k < K; ++k) w[static_cast<std::size_t>(k)] = std::exp(lp[static_cast<std::size_t>(k)] - mx);
          q[t] = static_cast<int>(rng.categorical(w));
        }
      }
    }

    if (iter >= cfg.burn_in && (iter - cfg.burn_in + 1) % cfg.thinning == 0) {
      const std::vector<int> order = detail::canonical_order(cur);
      std::vector<std::uint8_t> relabel(static_cast<std::size_t>(K));
      for (int a = 0; a < K; ++a) relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(a)])] = static_cast<std::uint8_t>(a);
      out.draws.push_back(detail::permute_states(cur, order));
      std::vector<std::uint8_t> st(T);
      for (std::size_t t = 0; t < T; ++t) st[t] = relabel[static_cast<std::size_t>(q[t])];
      out.states.push_back(std::move(st));
    }
  }
  return out;
}

inline PosteriorSamples gibbs_fit(const MergeEvent& event, int K, const FitConfig& cfg) {
  const ObservedSequence s = observed(event);
  return gibbs_fit(std::span<const ObservedSequence>(&s, 1), K, cfg);
}

/// Pooled fit: one parameter set shared by every event.
inline PosteriorSamples gibbs_fit(std::span<const MergeEvent> events, int K, const FitConfig& cfg) {
  std::vector<ObservedSequence> seqs;
  for (const auto& e : events) seqs.push_back(observed(e));
  return gibbs_fit(seqs, K, cfg);
}

/// Per-frame posterior mode of the retained state draws, one vector per
/// sequence. Ties go to the lower state index.
inline std::vector<std::vector<int>> decode_states(const PosteriorSamples& samples) {
  if (samples.states.empty()) throw InputError("decode_states: no retained draws");
  const std::size_t T = samples.total_length();
  std::vector<int> mode(T, 0);
  std::vector<std::size_t> counts(static_cast<std::size_t>(samples.K));
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& d : samples.states) ++counts[d[t]];
    mode[t] = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  std::vector<std::vector<int>> out;
  for (std::size_t s = 0; s < samples.sequence_count(); ++s)
    out.emplace_back(mode.begin() + static_cast<std::ptrdiff_t>(samples.offsets[s]),
                     mode.begin() + static_cast<std::ptrdiff_t>(samples.offsets[s + 1]));
  return out;
}

/// Joint-MAP alternative: Viterbi under the posterior-mean parameters.
inline std::vector<std::vector<int>> decode_states_viterbi(const PosteriorSamples& samples,
                                                           std::span<const ObservedSequence> sequences) {
  const NhmmParams mean = samples.posterior_mean();
  std::vector<std::vector<int>> out;
  for (const auto& s : sequences) {
    std::vector<Covariates> z;
    for (const auto& x : s.X) z.push_back(samples.scaler.apply(x));
    out.push_back(viterbi(mean, s.O, z));
  }
  return out;
}

}  // namespace onramp::nhmm
