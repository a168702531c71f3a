#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "appjudge/scoring.hpp"

using namespace appjudge;
using namespace appjudge::scoring;
using judge::CaseVerdict;
using judge::Provenance;

namespace {

std::vector<CaseVerdict> verdicts_of(const std::vector<Outcome>& results) {
  std::vector<CaseVerdict> out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    out.push_back({static_cast<int>(i), results[i], "e", Provenance::agent_report, std::nullopt});
  }
  return out;
}

testgen::TestCase linked(int id, std::vector<int> features) {
  return {id, "c" + std::to_string(id), std::move(features), testgen::CaseOrigin::generated};
}

// Independent oracle: covariance over the product of standard deviations,
// with deviations taken from the mean.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

Outcome random_outcome(std::mt19937& rng) { return static_cast<Outcome>(rng() % 3); }

}  // namespace

TEST(BinaryScore, Mapping) {
  EXPECT_EQ(binary_score(Outcome::Pass), 1);
  EXPECT_EQ(binary_score(Outcome::Uncertain), 0);
  EXPECT_EQ(binary_score(Outcome::Fail), 0);
  EXPECT_EQ(binary_score("true"), 1);
  EXPECT_EQ(binary_score("Pass"), 1);
  EXPECT_EQ(binary_score("uncertain"), 0);
  EXPECT_EQ(binary_score("false"), 0);
  EXPECT_THROW(binary_score("sometimes"), Error);
  for (auto o : {Outcome::Pass, Outcome::Fail, Outcome::Uncertain}) {
    EXPECT_EQ(binary_score(to_label_string(o)), binary_score(o));
    EXPECT_EQ(binary_score(to_string(o)), binary_score(o));
  }
}

TEST(CaseQuality, Examples) {
  const auto q = case_level_quality(verdicts_of({Outcome::Pass, Outcome::Pass, Outcome::Fail, Outcome::Uncertain}));
  EXPECT_EQ(q.value, 0.5);
  EXPECT_EQ(q.n_items, 4);
  EXPECT_EQ(q.level, Level::case_level);
  EXPECT_EQ(case_level_quality(verdicts_of(std::vector<Outcome>(17, Outcome::Pass))).value, 1.0);
  EXPECT_EQ(case_level_quality(verdicts_of({Outcome::Uncertain})).value, 0.0);
  EXPECT_THROW(case_level_quality(std::vector<CaseVerdict>{}), Error);
}

TEST(CaseQuality, PermutationInvariantAndMonotone) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Outcome> r(1 + rng() % 20);
    for (auto& o : r) o = random_outcome(rng);
    const double q = case_level_quality(verdicts_of(r)).value;
    auto shuffled = r;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(case_level_quality(verdicts_of(shuffled)).value, q);
    const auto i = rng() % r.size();
    auto flipped = r;
    flipped[i] = Outcome::Pass;
    EXPECT_GE(case_level_quality(verdicts_of(flipped)).value, q);
  }
}

TEST(FeatureQuality, Strategies) {
  const std::vector<testgen::TestCase> two{linked(0, {1}), linked(1, {1})};
  EXPECT_TRUE(feature_level_quality(verdicts_of({Outcome::Pass, Outcome::Pass}), two, 1, FeatureStrategy::all_pass)
                  .features[0]
                  .passed);

  const std::vector<testgen::TestCase> three{linked(0, {1}), linked(1, {1}), linked(2, {1})};
  const auto v = verdicts_of({Outcome::Pass, Outcome::Pass, Outcome::Fail});
  EXPECT_TRUE(feature_level_quality(v, three, 1, FeatureStrategy::majority).features[0].passed);
  EXPECT_FALSE(feature_level_quality(v, three, 1, FeatureStrategy::all_pass).features[0].passed);

  const std::vector<testgen::TestCase> tie{linked(0, {1}), linked(1, {1})};
  EXPECT_FALSE(feature_level_quality(verdicts_of({Outcome::Pass, Outcome::Fail}), tie, 1, FeatureStrategy::majority)
                   .features[0]
                   .passed);
}

TEST(FeatureQuality, FourFeaturesThreePass) {
  const std::vector<testgen::TestCase> cs{linked(0, {1}), linked(1, {2}), linked(2, {3}), linked(3, {4})};
  const auto fq = feature_level_quality(verdicts_of({Outcome::Pass, Outcome::Pass, Outcome::Pass, Outcome::Fail}), cs,
                                        4, FeatureStrategy::all_pass);
  EXPECT_EQ(fq.score.value, 0.75);
  EXPECT_EQ(fq.score.n_items, 4);
  EXPECT_EQ(fq.score.level, Level::feature_level);
  EXPECT_EQ(fq.features[3].linked_cases, std::vector<int>{3});
}

TEST(FeatureQuality, UnlinkedFeatureFailsAndPreconditions) {
  const std::vector<testgen::TestCase> cs{linked(0, {1})};
  const auto fq = feature_level_quality(verdicts_of({Outcome::Pass}), cs, 2, FeatureStrategy::majority);
  EXPECT_TRUE(fq.features[0].passed);
  EXPECT_FALSE(fq.features[1].passed);
  EXPECT_TRUE(fq.features[1].linked_cases.empty());
  EXPECT_EQ(fq.score.value, 0.5);
  EXPECT_THROW(feature_level_quality(std::vector<CaseVerdict>{}, cs, 1, FeatureStrategy::all_pass), Error);
  EXPECT_THROW(feature_level_quality(verdicts_of({Outcome::Pass}), cs, 0, FeatureStrategy::all_pass), Error);
  const std::vector<testgen::TestCase> bad{linked(0, {3})};
  EXPECT_THROW(feature_level_quality(verdicts_of({Outcome::Pass}), bad, 2, FeatureStrategy::all_pass), Error);
}

TEST(FeatureQuality, MajorityNeverBelowAllPass) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const int n_features = 1 + static_cast<int>(rng() % 6);
    const int n_cases = 1 + static_cast<int>(rng() % 15);
    std::vector<testgen::TestCase> cs;
    std::vector<Outcome> results;
    for (int i = 0; i < n_cases; ++i) {
      std::vector<int> fs;
      for (int f = 1; f <= n_features; ++f) {
        if (rng() % 3 == 0) fs.push_back(f);
      }
      cs.push_back(linked(i, fs));
      results.push_back(random_outcome(rng));
    }
    const auto v = verdicts_of(results);
    EXPECT_GE(feature_level_quality(v, cs, n_features, FeatureStrategy::majority).score.value,
              feature_level_quality(v, cs, n_features, FeatureStrategy::all_pass).score.value);
  }
}

TEST(Accuracy, Examples) {
  const std::vector<Outcome> agent{Outcome::Pass, Outcome::Fail, Outcome::Uncertain, Outcome::Pass};
  const std::vector<Outcome> human{Outcome::Pass, Outcome::Fail, Outcome::Pass, Outcome::Fail};
  EXPECT_EQ(accuracy(agent, human), 0.5);
  EXPECT_EQ(accuracy(agent, agent), 1.0);
  EXPECT_EQ(three_class_accuracy(agent, human), 0.5);
  const std::vector<Outcome> three(3, Outcome::Pass), four(4, Outcome::Pass);
  try {
    accuracy(three, four);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::length_mismatch);
  }
  EXPECT_THROW(accuracy(std::vector<Outcome>{}, std::vector<Outcome>{}), Error);
}

TEST(Accuracy, UncertainMatchesFailInBinaryOnly) {
  const std::vector<Outcome> a{Outcome::Uncertain}, h{Outcome::Fail};
  EXPECT_EQ(accuracy(a, h), 1.0);
  EXPECT_EQ(three_class_accuracy(a, h), 0.0);
}

TEST(Accuracy, ReflexiveAndSymmetric) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Outcome> a(1 + rng() % 20), b;
    for (auto& o : a) o = random_outcome(rng);
    for (std::size_t i = 0; i < a.size(); ++i) b.push_back(random_outcome(rng));
    EXPECT_EQ(accuracy(a, a), 1.0);
    EXPECT_EQ(accuracy(a, b), accuracy(b, a));
    const double acc = accuracy(a, b);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
}

TEST(Pearson, Examples) {
  const std::vector<double> x{0, 1, 1}, y{0, 1, 0};
  ASSERT_TRUE(pearson(x, y));
  EXPECT_NEAR(*pearson(x, y), pearson_oracle(x, y), 1e-12);
  EXPECT_NEAR(*pearson(x, y), 0.5, 1e-12);
  const std::vector<double> z{0.2, 0.9, 0.4, 0.7};
  EXPECT_NEAR(*pearson(z, z), 1.0, 1e-12);
  const std::vector<double> c{0.3, 0.3, 0.3};
  EXPECT_FALSE(pearson(c, y));
  EXPECT_FALSE(pearson(y, c));
  const std::vector<double> one{1};
  EXPECT_THROW(pearson(one, one), Error);
  const std::vector<double> two{1, 2};
  EXPECT_THROW(pearson(two, x), Error);
}

TEST(Pearson, MatchesOracleAndAffineInvariant) {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> x(2 + rng() % 30), y;
    for (auto& v : x) v = u(rng);
    for (std::size_t i = 0; i < x.size(); ++i) y.push_back(u(rng));
    const auto r = pearson(x, y);
    ASSERT_TRUE(r);
    EXPECT_NEAR(*r, pearson_oracle(x, y), 1e-9);
    EXPECT_GE(*r, -1.0);
    EXPECT_LE(*r, 1.0);
    const double a = 0.1 + 10 * u(rng), b = u(rng) * 5 - 2.5;
    std::vector<double> ax;
    for (double v : x) ax.push_back(a * v + b);
    EXPECT_NEAR(*pearson(ax, y), *r, 1e-9);
    EXPECT_NEAR(*pearson(y, ax), *r, 1e-9);
  }
}

TEST(Overlap, Examples) {
  const std::vector<double> x{0.05, 0.95}, y{0.05, 0.05};
  EXPECT_DOUBLE_EQ(distribution_overlap(x, y), 0.5);
  EXPECT_DOUBLE_EQ(distribution_overlap(x, x), 1.0);
  const std::vector<double> low{0.0, 0.05, 0.09}, high{0.9, 0.95, 1.0};
  EXPECT_DOUBLE_EQ(distribution_overlap(low, high), 0.0);
  const std::vector<double> bad{1.2};
  try {
    distribution_overlap(bad, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::out_of_range);
  }
  EXPECT_THROW(distribution_overlap(std::vector<double>{}, x), Error);
}

TEST(Overlap, SymmetricAndOneIffSameBins) {
  std::mt19937 rng(12);
  std::uniform_int_distribution<int> tenth(0, 10);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> x(1 + rng() % 8), y(1 + rng() % 8);
    for (auto& v : x) v = tenth(rng) / 10.0;
    for (auto& v : y) v = tenth(rng) / 10.0;
    const double o = distribution_overlap(x, y);
    EXPECT_DOUBLE_EQ(o, distribution_overlap(y, x));
    // Oracle: compare normalized bin frequencies directly.
    auto freq = [](const std::vector<double>& v) {
      std::vector<double> f(10, 0.0);
      for (double s : v) f[std::min(9, static_cast<int>(std::floor(s * 10 + 1e-9)))] += 1.0 / static_cast<double>(v.size());
      return f;
    };
    const auto fx = freq(x), fy = freq(y);
    double expect = 0;
    bool same = true;
    for (int b = 0; b < 10; ++b) {
      expect += std::min(fx[b], fy[b]);
      same = same && std::abs(fx[b] - fy[b]) < 1e-12;
    }
    EXPECT_NEAR(o, expect, 1e-12);
    EXPECT_EQ(std::abs(o - 1.0) < 1e-12, same);
  }
}

TEST(Deviation, Examples) {
  const std::vector<double> m{0.9, 0.1}, h{0.5, 0.5};
  EXPECT_NEAR(mean_abs_deviation(m, h), 0.4, 1e-12);
  EXPECT_EQ(mean_abs_deviation(m, m), 0.0);
  const std::vector<double> three{0.1, 0.2, 0.3};
  EXPECT_THROW(mean_abs_deviation(m, three), Error);
}

TEST(Align, SingleProjectHasUndefinedCorrelations) {
  ProjectScores p{"t", 0.5, 0.6, 0.6, {Outcome::Pass, Outcome::Fail}, {Outcome::Pass, Outcome::Pass}};
  const auto r = align(std::vector<ProjectScores>{p});
  EXPECT_FALSE(r.pearson_case);
  EXPECT_FALSE(r.pearson_feature);
  ASSERT_TRUE(r.accuracy);
  EXPECT_EQ(*r.accuracy, 0.5);
  EXPECT_EQ(r.n_projects, 1);
  EXPECT_EQ(r.n_cases, 2);
  EXPECT_NEAR(r.mean_abs_deviation, 0.0, 1e-12);
  const auto j = alignment_to_json(r);
  EXPECT_EQ(j["pearson_case"], "undefined");
}

TEST(Align, PoolsCasesAndCorrelatesQualities) {
  std::vector<ProjectScores> ps{{"a", 0.2, 0.2, 0.0, {Outcome::Pass}, {Outcome::Pass}},
                                {"b", 0.6, 0.4, 1.0, {Outcome::Fail, Outcome::Pass}, {Outcome::Fail, Outcome::Fail}},
                                {"c", 1.0, 0.6, 1.0, {}, {}}};
  const auto r = align(ps);
  EXPECT_EQ(r.n_cases, 3);
  EXPECT_NEAR(*r.accuracy, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(*r.pearson_case, pearson_oracle({0.2, 0.6, 1.0}, {0.0, 1.0, 1.0}), 1e-12);
  EXPECT_NEAR(*r.pearson_feature, pearson_oracle({0.2, 0.4, 0.6}, {0.0, 1.0, 1.0}), 1e-12);
  EXPECT_NEAR(r.mean_abs_deviation, (0.2 + 0.6 + 0.4) / 3, 1e-12);
}

TEST(Align, NoCaseLabelsMeansNoAccuracy) {
  std::vector<ProjectScores> ps{{"a", 0.2, 0.2, 0.0, {}, {}}, {"b", 0.6, 0.4, 1.0, {}, {}}};
  EXPECT_FALSE(align(ps).accuracy);
}

TEST(Round4, HalfAwayFromZero) {
  EXPECT_EQ(round4(0.12345), 0.1235);
  EXPECT_EQ(round4(-0.12345), -0.1235);
  EXPECT_EQ(round4(0.5), 0.5);
}
