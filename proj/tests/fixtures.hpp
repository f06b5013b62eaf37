#pragma once
// Shared synthetic setups for the test binaries.

#include <cmath>
#include <vector>

#include "onramp/nhmm/gibbs.hpp"
#include "onramp/random.hpp"
#include "onramp/synthetic.hpp"

namespace fixtures {

using namespace onramp;

inline nhmm::NhmmParams random_params(int K, Random& rng, double logit_sd = 2.0) {
  auto p = nhmm::NhmmParams::zeros(K);
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < 4; ++d) p.mu[static_cast<std::size_t>(k)][d] = rng.normal(0.0, 2.0);
    Eigen::Matrix4d B;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) B(i, j) = rng.normal(0.0, 0.6);
    p.sigma[static_cast<std::size_t>(k)] = B * B.transpose() + 0.3 * Eigen::Matrix4d::Identity();
  }
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) p.xi(i, j) = rng.normal(0.0, logit_sd);
  for (int j = 0; j < K; ++j)
    for (int c = 0; c < static_cast<int>(kCovariateDim); ++c) p.rho(j, c) = rng.normal(0.0, logit_sd / 2.0);
  std::vector<double> alpha(static_cast<std::size_t>(K), 1.0);
  const auto w = rng.dirichlet(alpha);
  for (int k = 0; k < K; ++k) p.pi0[k] = w[static_cast<std::size_t>(k)];
  return p;
}

// Three states, unit covariances, means 1.5 apart in every coordinate
// (3 SDs in Euclidean distance), persistence 2.5 on the diagonal, and
// covariates 0 and 2 driving entry into states 0 and 1.
inline nhmm::NhmmParams three_state_truth() {
  auto p = nhmm::NhmmParams::zeros(3);
  for (int k = 0; k < 3; ++k) p.mu[static_cast<std::size_t>(k)] = Eigen::Vector4d::Constant(1.5 * k);
  for (int k = 0; k < 3; ++k) p.xi(k, k) = 2.5;
  p.rho(0, 0) = 1.5;
  p.rho(1, 2) = -1.5;
  p.rezero_reference();
  return p;
}

// Two states; standardized weight w on covariate 0 for entering state 0.
inline nhmm::NhmmParams two_state_truth(double w) {
  auto p = nhmm::NhmmParams::zeros(2);
  p.mu[1] = Eigen::Vector4d::Constant(1.5);
  p.xi(0, 0) = 1.0;
  p.xi(1, 1) = 1.0;
  p.rho(0, 0) = w;
  p.rezero_reference();
  return p;
}

// Covariates outside `active` are zeroed after simulation; their weights are
// zero so the simulated states do not depend on them.
inline synth::NhmmSynthetic nhmm_data(const nhmm::NhmmParams& p, std::size_t n, std::size_t T, std::uint64_t seed,
                                      std::vector<std::size_t> active) {
  auto data = synth::gen_nhmm_sequences(p, {}, n, T, seed);
  for (auto& e : data.events)
    for (auto& x : e.X)
      for (std::size_t c = 0; c < kCovariateDim; ++c)
        if (std::find(active.begin(), active.end(), c) == active.end()) x[c] = 0.0;
  return data;
}

inline std::vector<nhmm::ObservedSequence> observed_all(const std::vector<MergeEvent>& events) {
  std::vector<nhmm::ObservedSequence> out;
  for (const auto& e : events) out.push_back(nhmm::observed(e));
  return out;
}

inline nhmm::FitConfig acceptance_fit(std::uint64_t seed) {
  nhmm::FitConfig c;
  c.iterations = 1000;
  c.burn_in = 500;
  c.thinning = 1;
  c.seed = seed;
  return c;
}

inline tskm::Series random_series(std::size_t n, Random& rng) {
  tskm::Series s(n);
  for (auto& o : s)
    for (auto& v : o) v = rng.normal();
  return s;
}

inline std::vector<tskm::Series> family_templates() {
  std::vector<tskm::Series> out;
  const std::size_t lengths[] = {20, 26, 32};
  for (int f = 0; f < 3; ++f) {
    tskm::Series s(lengths[f]);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double u = static_cast<double>(k) / static_cast<double>(s.size() - 1);
      s[k] = {8.0 * f + std::sin(3.0 * u), -6.0 * f + 2.0 * u, 4.0 * (f == 1) + std::cos(4.0 * u), 3.0 * f * u};
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fixtures
