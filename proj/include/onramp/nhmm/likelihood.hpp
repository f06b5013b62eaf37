#pragma once

#include <span>
#include <vector>

#include "onramp/nhmm/params.hpp"

namespace onramp::nhmm {

inline std::vector<GaussianEmission> emission_cache(const NhmmParams& p) {
  std::vector<GaussianEmission> out;
  out.reserve(static_cast<std::size_t>(p.K));
  for (int k = 0; k < p.K; ++k) out.emplace_back(p.mu[static_cast<std::size_t>(k)], p.sigma[static_cast<std::size_t>(k)]);
  return out;
}

/// log P(O | X, params) by the scaled forward recursion. X must already be on
/// the model's (standardized) scale. The first frame uses pi0; frame t > 0
/// uses the transition matrix evaluated at X[t].
inline double sequence_loglik(const NhmmParams& p, std::span<const Behavior> O, std::span<const Covariates> X) {
  if (O.size() != X.size()) throw InputError("sequence_loglik: O and X lengths differ");
  if (O.empty()) throw InputError("sequence_loglik: empty sequence");
  const auto em = emission_cache(p);
  const Eigen::Index K = p.K;
  Eigen::VectorXd logb(K);
  Eigen::RowVectorXd alpha(K);
  double loglik = 0.0;
  for (std::size_t t = 0; t < O.size(); ++t) {
    if (!all_finite(X[t])) throw InputError("sequence_loglik: covariates must be finite");
    const Vec4 o = to_eigen(O[t]);
    for (Eigen::Index k = 0; k < K; ++k) logb[k] = em[static_cast<std::size_t>(k)].logdensity(o);
    const double m = logb.maxCoeff();
    const Eigen::RowVectorXd b = (logb.array() - m).exp().transpose();
    if (t == 0) {
      alpha = p.pi0.transpose().cwiseProduct(b);
    } else {
      alpha = (alpha * transition_matrix_at(p, X[t])).cwiseProduct(b);
    }
    const double c = alpha.sum();
    alpha /= c;
    loglik += std::log(c) + m;
  }
  return loglik;
}

/// Joint MAP state path under fixed parameters.
inline std::vector<int> viterbi(const NhmmParams& p, std::span<const Behavior> O, std::span<const Covariates> X) {
  if (O.size() != X.size()) throw InputError("viterbi: O and X lengths differ");
  const std::size_t T = O.size();
  const Eigen::Index K = p.K;
  std::vector<int> path(T, 0);
  if (T == 0) return path;
  const auto em = emission_cache(p);
  Eigen::MatrixXd delta(static_cast<Eigen::Index>(T), K);
  Eigen::MatrixXi back = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(T), K);
  for (std::size_t t = 0; t < T; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    const Vec4 o = to_eigen(O[t]);
    Eigen::MatrixXd logA;
    if (t > 0) logA = log_transition_matrix_at(p, to_eigen(X[t]));
    for (Eigen::Index k = 0; k < K; ++k) {
      const double lb = em[static_cast<std::size_t>(k)].logdensity(o);
      if (t == 0) {
        delta(0, k) = std::log(p.pi0[k]) + lb;
        continue;
      }
      Eigen::Index arg = 0;
      double best = delta(ti - 1, 0) + logA(0, k);
      for (Eigen::Index i = 1; i < K; ++i) {
        const double v = delta(ti - 1, i) + logA(i, k);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      delta(ti, k) = best + lb;
      back(ti, k) = static_cast<int>(arg);
    }
  }
  Eigen::Index last = 0;
  delta.row(static_cast<Eigen::Index>(T) - 1).maxCoeff(&last);
  path[T - 1] = static_cast<int>(last);
  for (std::size_t t = T - 1; t > 0; --t) path[t - 1] = back(static_cast<Eigen::Index>(t), path[t]);
  return path;
}

}  // namespace onramp::nhmm
