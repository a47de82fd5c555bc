#include <gtest/gtest.h>

#include "error.hpp"
#include "fixtures.hpp"
#include "metrics.hpp"

using namespace memefusion;

namespace {

constexpr Label T = Label::kTroll;
constexpr Label N = Label::kNotTroll;

ConfusionMatrix counts(std::uint64_t tt, std::uint64_t tn, std::uint64_t nt, std::uint64_t nn) {
  return {tt, tn, nt, nn};
}

}  // namespace

TEST(Confusion, TalliesGoldByPredicted) {
  const std::vector<Label> gold{T, T, T, N, N};
  const std::vector<Label> pred{T, N, T, T, N};
  const auto cm = confusion_matrix(gold, pred);
  EXPECT_EQ(cm, counts(2, 1, 1, 1));
  EXPECT_EQ(cm.support(T), 3u);
  EXPECT_EQ(cm.predicted(T), 3u);
  EXPECT_EQ(cm.n(), 5u);
}

TEST(Confusion, RejectsMismatchedOrMissingGold) {
  const std::vector<Label> two{T, N};
  const std::vector<Label> one{T};
  EXPECT_THROW(confusion_matrix(two, one), Error);
  const std::vector<std::optional<Label>> gold{T, std::nullopt};
  try {
    confusion_matrix(gold, two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
  }
}

TEST(Metrics, HandWorkedExample) {
  // gold troll 3 (2 found), gold not_troll 2 (1 found)
  const auto r = make_report("m", counts(2, 1, 1, 1));
  EXPECT_DOUBLE_EQ(r.accuracy, 3.0 / 5.0);
  const double p_t = 2.0 / 3.0, r_t = 2.0 / 3.0;
  const double p_n = 1.0 / 2.0, r_n = 1.0 / 2.0;
  EXPECT_NEAR(r.f1_troll, 2 * p_t * r_t / (p_t + r_t), 1e-15);
  EXPECT_NEAR(r.weighted.precision, 0.6 * p_t + 0.4 * p_n, 1e-15);
  EXPECT_NEAR(r.weighted.recall, 0.6 * r_t + 0.4 * r_n, 1e-15);
  EXPECT_NEAR(r.weighted.f1, 0.6 * (2.0 / 3.0) + 0.4 * 0.5, 1e-15);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Metrics, AllTrollBaselineOnTheTestSplit) {
  const auto golden = mftest::read_json(mftest::data_dir() / "scalar_golden.json");
  const auto r = make_report("all_troll", counts(395, 0, 272, 0));
  EXPECT_NEAR(r.accuracy, golden.at("baseline_accuracy_395_667").get<double>(), 1e-12);
  EXPECT_NEAR(r.f1_troll, golden.at("baseline_f1_troll").get<double>(), 1e-12);
  EXPECT_EQ(r.weighted.recall, r.accuracy);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("precision for not_troll"), std::string::npos);
}

TEST(Metrics, ZeroDenominatorsGiveZeroWithWarnings) {
  // No troll gold, never predicted troll.
  const auto r = make_report("m", counts(0, 0, 0, 4));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.f1_troll, 0.0);
  EXPECT_EQ(r.weighted.recall, 1.0);
  EXPECT_EQ(r.weighted.precision, 1.0);
  EXPECT_EQ(r.weighted.f1, 1.0);
  EXPECT_FALSE(r.warnings.empty());

  MetricWarnings w;
  const auto prf = per_class_prf(counts(0, 3, 0, 2), T, &w);
  EXPECT_EQ(prf.precision, 0.0);
  EXPECT_EQ(prf.recall, 0.0);
  EXPECT_EQ(prf.f1, 0.0);
  EXPECT_EQ(w.size(), 1u);

  EXPECT_THROW(make_report("m", ConfusionMatrix{}), Error);
}

TEST(Metrics, WeightedRecallIsAccuracyBitForBit) {
  for (std::uint64_t tt = 0; tt < 12; ++tt) {
    for (std::uint64_t tn = 0; tn < 12; ++tn) {
      for (std::uint64_t nt = 0; nt < 12; ++nt) {
        for (std::uint64_t nn = 0; nn < 12; ++nn) {
          const auto cm = counts(tt, tn, nt, nn);
          if (cm.n() == 0) continue;
          ASSERT_EQ(weighted_prf(cm).recall, accuracy(cm)) << tt << tn << nt << nn;
        }
      }
    }
  }
  const auto r = make_report("m", counts(200, 195, 101, 171));
  EXPECT_EQ(r.weighted.recall, r.accuracy);
}

TEST(Metrics, FuzzAgainstBruteForceOracle) {
  const auto fuzz = mftest::metric_fuzz(3000, 2024);
  EXPECT_EQ(fuzz.pairs, 3000);
  EXPECT_LE(fuzz.max_abs_error, 1e-12) << fuzz.worst;
  EXPECT_TRUE(fuzz.recall_is_accuracy);
}

TEST(Metrics, BoundedInUnitInterval) {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const auto cm = counts(rng.below(20), rng.below(20), rng.below(20), rng.below(20) + 1);
    const auto r = make_report("m", cm);
    for (double v : {r.accuracy, r.f1_troll, r.weighted.precision, r.weighted.recall,
                     r.weighted.f1}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}
