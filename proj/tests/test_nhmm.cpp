#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "onramp/nhmm/polya_gamma.hpp"
#include "onramp/nhmm/selection.hpp"
#include "oracles.hpp"

using namespace onramp;
using namespace onramp::nhmm;

namespace {

std::vector<int> brute_force_map(const NhmmParams& p, const std::vector<Behavior>& O, const std::vector<Covariates>& X) {
  const std::size_t T = O.size();
  std::vector<int> q(T, 0), best;
  double best_p = -1.0;
  while (true) {
    double prob = p.pi0[q[0]] * oracle::gaussian_density(O[0], p.mu[q[0]], p.sigma[q[0]]);
    for (std::size_t t = 1; t < T; ++t)
      prob *= oracle::transition(p, q[t - 1], q[t], X[t]) * oracle::gaussian_density(O[t], p.mu[q[t]], p.sigma[q[t]]);
    if (prob > best_p) {
      best_p = prob;
      best = q;
    }
    std::size_t k = 0;
    while (k < T && ++q[k] == p.K) q[k++] = 0;
    if (k == T) break;
  }
  return best;
}

FitConfig quick(std::uint64_t seed, std::size_t iters = 300) {
  FitConfig c;
  c.iterations = iters;
  c.burn_in = iters / 2;
  c.thinning = 1;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(PolyaGamma, MomentsMatchClosedForm) {
  PolyaGammaSampler pg;
  Random rng(17);
  for (double z : {0.0, 0.5, 2.0, 6.0}) {
    const double mean = z == 0.0 ? 0.25 : std::tanh(z / 2.0) / (2.0 * z);
    const double var = z == 0.0 ? 1.0 / 24.0 : (std::sinh(z) - z) / (4.0 * z * z * z * std::pow(std::cosh(z / 2.0), 2));
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = pg.draw(z, rng);
      ASSERT_GT(w, 0.0);
      s += w;
      s2 += w * w;
    }
    const double m = s / n;
    const double v = s2 / n - m * m;
    EXPECT_NEAR(m, mean, 4.0 * std::sqrt(var / n)) << "z=" << z;
    EXPECT_NEAR(v, var, 0.03 * var) << "z=" << z;
    EXPECT_NEAR(PolyaGammaSampler::mean(z), mean, 1e-12);
  }
}

TEST(Likelihood, ViterbiMatchesEnumeration) {
  Random rng(31);
  for (int inst = 0; inst < 50; ++inst) {
    const int K = 2 + static_cast<int>(rng.uniform_index(2));
    const auto p = fixtures::random_params(K, rng);
    const std::size_t T = 2 + rng.uniform_index(5);
    std::vector<Behavior> O(T);
    std::vector<Covariates> X(T);
    for (std::size_t t = 0; t < T; ++t) {
      for (auto& v : O[t]) v = rng.normal(0.0, 2.0);
      for (auto& v : X[t]) v = rng.normal();
    }
    EXPECT_EQ(viterbi(p, O, X), brute_force_map(p, O, X)) << "instance " << inst;
  }
}

TEST(Likelihood, ReferenceRezeroKeepsProbabilities) {
  Random rng(5);
  auto p = fixtures::random_params(3, rng);
  Covariates x{0.3, -1.0, 2.0, 0.1, 0.0, 1.5};
  const Eigen::MatrixXd before = transition_matrix_at(p, x);
  p.rezero_reference();
  EXPECT_TRUE(p.xi.col(2).isZero(0.0));
  EXPECT_TRUE(p.rho.row(2).isZero(0.0));
  EXPECT_LT((transition_matrix_at(p, x) - before).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Likelihood, HomogeneousWhenWeightsZero) {
  Random rng(6);
  auto p = fixtures::random_params(3, rng);
  p.rho.setZero();
  const Eigen::MatrixXd a = transition_matrix_at(p, Covariates{1, 2, 3, 4, 5, 6});
  const Eigen::MatrixXd b = transition_matrix_at(p, Covariates{-3, 0, 9, 1, -2, 0.5});
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Likelihood, RejectsBadInput) {
  auto p = NhmmParams::zeros(2);
  std::vector<Behavior> O(3);
  std::vector<Covariates> X(2);
  EXPECT_THROW(sequence_loglik(p, O, X), InputError);
  X.resize(3);
  X[1][0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sequence_loglik(p, O, X), InputError);
}

TEST(Gibbs, InverseWishartMean) {
  Random rng(8);
  Mat4 psi = Mat4::Identity();
  psi(0, 1) = psi(1, 0) = 0.4;
  psi(2, 2) = 2.0;
  const double nu = 12.0;
  Mat4 sum = Mat4::Zero();
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += detail::draw_inverse_wishart(nu, psi, rng);
  const Mat4 expect = psi / (nu - 4.0 - 1.0);
  EXPECT_LT((sum / n - expect).cwiseAbs().maxCoeff(), 0.01);
}

TEST(Gibbs, SameSeedSameChain) {
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 3, 60, 77, {0, 2});
  const auto seqs = fixtures::observed_all(data.events);
  const auto a = gibbs_fit(seqs, 3, quick(4));
  const auto b = gibbs_fit(seqs, 3, quick(4));
  const auto c = gibbs_fit(seqs, 3, quick(5));
  ASSERT_EQ(a.draws.size(), 150u);
  EXPECT_EQ(a.states, b.states);
  for (std::size_t d = 0; d < a.draws.size(); ++d) {
    EXPECT_EQ(a.draws[d].mu[1], b.draws[d].mu[1]);
    EXPECT_EQ(a.draws[d].rho, b.draws[d].rho);
  }
  EXPECT_NE(a.draws.back().mu[0], c.draws.back().mu[0]);
}

TEST(Gibbs, ThinningAndLabelOrder) {
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 4, 150, 78, {0, 2});
  const auto seqs = fixtures::observed_all(data.events);
  FitConfig cfg = quick(9, 400);
  cfg.thinning = 4;
  const auto s = gibbs_fit(seqs, 3, cfg);
  EXPECT_EQ(s.draws.size(), 50u);
  EXPECT_EQ(s.sequence_count(), 4u);
  EXPECT_EQ(s.total_length(), 600u);
  for (const auto& d : s.draws) {
    EXPECT_LE(d.mu[0][1], d.mu[1][1]);
    EXPECT_LE(d.mu[1][1], d.mu[2][1]);
    EXPECT_TRUE(d.xi.col(2).isZero(0.0));
  }
  const auto m = s.posterior_mean();
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(m.mu[k][1], 1.5 * k, 0.3);
  const auto q = decode_states(s);
  ASSERT_EQ(q.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(q[i].size(), 150u);
}

TEST(Gibbs, SingleStateRecoversMean) {
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 2, 100, 79, {0});
  const auto seqs = fixtures::observed_all(data.events);
  const auto s = gibbs_fit(seqs, 1, quick(3));
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();
  for (const auto& e : data.events)
    for (const auto& o : e.O) mean += to_eigen(o);
  mean /= 200.0;
  EXPECT_LT((s.posterior_mean().mu[0] - mean).cwiseAbs().maxCoeff(), 0.2);
}

TEST(Gibbs, ConstantCovariatesDropped) {
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 2, 80, 80, {0});
  const auto seqs = fixtures::observed_all(data.events);
  const auto s = gibbs_fit(seqs, 2, quick(3, 100));
  EXPECT_TRUE(s.scaler.active[0]);
  for (std::size_t c = 1; c < kCovariateDim; ++c) EXPECT_FALSE(s.scaler.active[c]);
  EXPECT_EQ(s.chain.warnings.size(), 5u);
  for (const auto& d : s.draws)
    for (Eigen::Index c = 1; c < 6; ++c) EXPECT_EQ(d.rho(0, c), 0.0);
}

TEST(Gibbs, InputErrors) {
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 1, 30, 81, {0});
  auto seqs = fixtures::observed_all(data.events);
  EXPECT_THROW(gibbs_fit(seqs, 0, quick(1)), InputError);
  FitConfig bad = quick(1);
  bad.burn_in = bad.iterations;
  EXPECT_THROW(gibbs_fit(seqs, 2, bad), InputError);
  FitConfig strict = quick(1);
  strict.min_sequence_length = 31;
  EXPECT_THROW(gibbs_fit(seqs, 2, strict), InputError);
  seqs[0].X = seqs[0].X.subspan(1);
  EXPECT_THROW(gibbs_fit(seqs, 2, quick(1)), InputError);
}

TEST(Selection, ParameterCount) {
  EXPECT_EQ(parameter_count(1, 6), 14u);
  EXPECT_EQ(parameter_count(3, 2), 42u + 6u + 4u + 2u);
  EXPECT_EQ(parameter_count(2, 0), 28u + 2u + 0u + 1u);
}

TEST(Selection, BicIsPenalizedLoglik) {
  const auto data = fixtures::nhmm_data(fixtures::three_state_truth(), 2, 100, 82, {0, 2});
  const auto seqs = fixtures::observed_all(data.events);
  const auto s = gibbs_fit(seqs, 2, quick(2));
  const auto row = bic(s, seqs);
  const double ll = total_loglik(s.posterior_mean(), s.scaler, seqs);
  EXPECT_DOUBLE_EQ(row.loglik, ll);
  EXPECT_EQ(row.parameters, parameter_count(2, 2));
  EXPECT_NEAR(row.bic, -2.0 * ll + static_cast<double>(row.parameters) * std::log(200.0), 1e-9);
}

TEST(Selection, QuantileType7) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 10, 3, 2}, 0.9), 7.6);
  EXPECT_DOUBLE_EQ(quantile({5}, 0.3), 5.0);
  EXPECT_THROW(quantile({}, 0.5), InputError);
}

TEST(Selection, SignificanceNeedsDraws) {
  const auto data = fixtures::nhmm_data(fixtures::two_state_truth(2.0), 2, 60, 83, {0, 1});
  const auto seqs = fixtures::observed_all(data.events);
  const auto s = gibbs_fit(seqs, 2, quick(2, 100));
  EXPECT_THROW(covariate_significance(s, 0.95), InputError);
  const auto t = gibbs_fit(seqs, 2, quick(2, 240));
  const auto sig = covariate_significance(t, 0.95);
  ASSERT_EQ(sig.size(), kCovariateDim);
  for (const auto& r : sig) {
    if (!r.active) continue;
    EXPECT_LE(r.lower, r.mean);
    EXPECT_LE(r.mean, r.upper);
    EXPECT_EQ(r.significant, r.lower > 0.0 || r.upper < 0.0);
    EXPECT_NEAR(r.mean_raw * t.scaler.sd[r.covariate], r.mean, 1e-12);
  }
}
