#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "onramp/tskm/kmeans.hpp"
#include "oracles.hpp"

using namespace onramp;
using namespace onramp::tskm;

namespace {

Series line(std::vector<double> xs) {
  Series s;
  for (double x : xs) s.push_back({x, 0, 0, 0});
  return s;
}

}  // namespace

TEST(Dtw, HandExample) {
  // a = 0 1 2, b = 0 2 : best path (0,0) (1,0|1) (2,1) with cost 1
  const auto al = dtw_distance(line({0, 1, 2}), line({0, 2}));
  EXPECT_DOUBLE_EQ(al.cost, 1.0);
  EXPECT_DOUBLE_EQ(al.distance, 1.0);
  ASSERT_EQ(al.path.size(), 3u);
  EXPECT_EQ(al.path.front(), (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(al.path.back(), (std::pair<std::size_t, std::size_t>{2, 1}));
}

TEST(Dtw, PathIsMonotoneAndCostMatches) {
  Random rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = fixtures::random_series(1 + rng.uniform_index(15), rng);
    const auto b = fixtures::random_series(1 + rng.uniform_index(15), rng);
    const auto al = dtw_distance(a, b);
    double c = 0.0;
    for (std::size_t k = 0; k < al.path.size(); ++k) {
      const auto [x, y] = al.path[k];
      c += squared_distance(a[x], b[y]);
      if (k > 0) {
        const auto [px, py] = al.path[k - 1];
        EXPECT_TRUE((x == px || x == px + 1) && (y == py || y == py + 1) && (x + y > px + py));
      }
    }
    EXPECT_NEAR(c, al.cost, 1e-9 * std::max(1.0, c));
    EXPECT_EQ(al.cost, dtw_cost(a, b));
    EXPECT_NEAR(al.distance * al.distance, al.cost, 1e-9 * std::max(1.0, c));
  }
}

TEST(Dtw, EqualLengthBoundedByEuclidean) {
  Random rng(3);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.uniform_index(20);
    const auto a = fixtures::random_series(n, rng);
    const auto b = fixtures::random_series(n, rng);
    double e = 0.0;
    for (std::size_t t = 0; t < n; ++t) e += squared_distance(a[t], b[t]);
    EXPECT_LE(dtw_distance(a, b).distance, std::sqrt(e) + 1e-12);
  }
}

TEST(Dtw, BandNeverBeatsUnconstrained) {
  Random rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto a = fixtures::random_series(5 + rng.uniform_index(10), rng);
    const auto b = fixtures::random_series(5 + rng.uniform_index(10), rng);
    DtwOptions band;
    band.band = 1;
    EXPECT_GE(dtw_cost(a, b, band), dtw_cost(a, b));
    DtwOptions wide;
    wide.band = 100;
    EXPECT_EQ(dtw_cost(a, b, wide), dtw_cost(a, b));
  }
}

TEST(Dtw, EmptyAndNonFiniteRejected) {
  EXPECT_THROW(dtw_distance(Series{}, line({1})), InputError);
  EXPECT_THROW(dtw_distance(line({std::nan("")}), line({1})), InputError);
}

TEST(Resample, KeepsEndpoints) {
  const auto s = resample(line({0, 10}), 5);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_DOUBLE_EQ(s[0][0], 0.0);
  EXPECT_DOUBLE_EQ(s[2][0], 5.0);
  EXPECT_DOUBLE_EQ(s[4][0], 10.0);
  EXPECT_EQ(resample(line({1, 2, 3}), 3), line({1, 2, 3}));
}

TEST(Dba, ObjectiveNeverIncreases) {
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.2, 12, 5, 0.3, 1.0);
  std::vector<Series> members(fam.primitives.begin(), fam.primitives.begin() + 12);
  const auto r = dba_centroid(members, 20, 15);
  for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LT(r.objective[i], r.objective[i - 1]);
  EXPECT_EQ(r.centroid.size(), 20u);
  std::vector<const Series*> ptr;
  for (const auto& m : members) ptr.push_back(&m);
  EXPECT_DOUBLE_EQ(r.objective.back(), dba_objective(r.centroid, std::span<const Series* const>(ptr)));
}

TEST(Dba, IdenticalMembersGiveThemBack) {
  const auto s = line({1, 3, 2, 5});
  const auto r = dba_centroid(std::vector<Series>{s, s, s}, 4);
  EXPECT_EQ(r.centroid, s);
  EXPECT_EQ(r.objective.front(), 0.0);
}

TEST(Kmeans, RecoversWarpedFamilies) {
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.05, 10, 12);
  const auto m = fit_tskm(fam.primitives, 3, 1);
  EXPECT_TRUE(oracle::same_partition(m.assignments, fam.labels));
  EXPECT_DOUBLE_EQ(adjusted_rand_index(m.assignments, fam.labels), 1.0);
  for (std::size_t i = 1; i < m.inertia_history.size(); ++i) EXPECT_LE(m.inertia_history[i], m.inertia_history[i - 1]);
}

TEST(Kmeans, DeterministicForSeed) {
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.3, 8, 13, 0.2, 1.0);
  const auto a = fit_tskm(fam.primitives, 4, 9);
  const auto b = fit_tskm(fam.primitives, 4, 9);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.inertia, b.inertia);
  EXPECT_EQ(a.centroids, b.centroids);
}

TEST(Kmeans, SaturationGivesZeroInertia) {
  Random rng(5);
  std::vector<Series> data;
  for (int i = 0; i < 6; ++i) data.push_back(fixtures::random_series(4 + rng.uniform_index(4), rng));
  const auto m = fit_tskm(data, 6, 2);
  EXPECT_EQ(m.inertia, 0.0);
  EXPECT_THROW(fit_tskm(data, 7, 2), InputError);
  EXPECT_THROW(fit_tskm(data, 0, 2), InputError);
}

TEST(Kmeans, InertiaCurveMonotoneAndSuggestsThree) {
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.05, 30, 14);
  const auto curve = inertia_curve(fam.primitives, {1, 2, 3, 4, 5, 6}, 3);
  ASSERT_EQ(curve.rows.size(), 6u);
  EXPECT_FALSE(curve.rows[0].change_rate.has_value());
  for (std::size_t i = 1; i < curve.rows.size(); ++i) {
    EXPECT_LE(curve.rows[i].lambda_w, curve.rows[i - 1].lambda_w);
    const double rate = (curve.rows[i - 1].lambda_w - curve.rows[i].lambda_w) / curve.rows[i - 1].lambda_w;
    EXPECT_NEAR(*curve.rows[i].change_rate, rate, 1e-12);
  }
  EXPECT_EQ(curve.suggested_k, 3);
}

TEST(Kmeans, AdjustedRandIndexValues) {
  const std::vector<int> a = {0, 0, 1, 1, 2, 2};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, std::vector<int>{5, 5, 3, 3, 9, 9}), 1.0);
  // hand count: n=6, contingency of a vs {0,0,0,1,1,1} gives sum C(nij,2)=2,
  // rows 3, columns 6, expected 3*6/15 = 1.2, max 4.5
  EXPECT_NEAR(adjusted_rand_index(a, std::vector<int>{0, 0, 0, 1, 1, 1}), (2.0 - 1.2) / (4.5 - 1.2), 1e-12);
}

TEST(Kmeans, ScalerRoundTrip) {
  Random rng(6);
  std::vector<Series> data;
  for (int i = 0; i < 5; ++i) data.push_back(fixtures::random_series(7, rng));
  const auto sc = FeatureScaler::fit(data);
  const auto z = sc.apply(data[2]);
  const auto back = sc.invert(z);
  for (std::size_t t = 0; t < back.size(); ++t)
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(back[t][d], data[2][t][d], 1e-12);
}

TEST(Kmeans, PatternSummaryShares) {
  const auto fam = synth::gen_primitive_families(fixtures::family_templates(), 0.05, 10, 15);
  const auto sc = FeatureScaler::fit(fam.primitives);
  std::vector<Series> z;
  for (const auto& s : fam.primitives) z.push_back(sc.apply(s));
  const auto m = fit_tskm(z, 3, 4);
  const auto sum = summarize_patterns(m, z, sc);
  double share = 0.0;
  std::size_t count = 0;
  for (const auto& p : sum) {
    share += p.share;
    count += p.count;
    EXPECT_LE(p.duration_min, p.duration_median);
    EXPECT_LE(p.duration_median, p.duration_max);
  }
  EXPECT_NEAR(share, 1.0, 1e-12);
  EXPECT_EQ(count, 30u);
}
