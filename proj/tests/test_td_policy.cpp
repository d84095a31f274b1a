#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "tdsim/errors.hpp"
#include "tdsim/td_policy.hpp"

using namespace tdsim;

namespace {

std::vector<double> uniform(std::size_t k) { return std::vector<double>(k, 1.0 / k); }

// Exhaustive search over the candidate grid. Among maximising candidates the
// largest wins, then it is mapped to the smallest candidate producing the same
// set of kept samples.
double oracle_tau(const std::vector<CalibrationSample>& group, double w) {
  const auto cands = threshold_candidates();
  auto objective = [&](double tau, std::vector<bool>& kept) {
    double acc = 0.0, sav = 0.0;
    kept.clear();
    for (const auto& s : group) {
      const bool keep = s.confidence >= tau;
      kept.push_back(keep);
      acc += keep ? s.early_correct : s.final_correct;
      sav += keep;
    }
    const double n = static_cast<double>(group.size());
    return w * acc / n + (1.0 - w) * sav / n;
  };
  std::vector<bool> kept;
  std::vector<double> obj;
  for (double c : cands) obj.push_back(objective(c, kept));
  const double best = *std::max_element(obj.begin(), obj.end());
  std::size_t arg = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (obj[i] >= best - 1e-12) arg = i;
  }
  std::vector<bool> target;
  objective(cands[arg], target);
  for (std::size_t i = 0; i <= arg; ++i) {
    objective(cands[i], kept);
    if (kept == target) return cands[i];
  }
  return cands[arg];
}

}  // namespace

TEST(Scores, ConfidenceExamples) {
  EXPECT_DOUBLE_EQ(confidence(uniform(10)), 0.1);
  EXPECT_DOUBLE_EQ(confidence(std::vector<double>{0, 1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(confidence(std::vector<double>{0.7, 0.2, 0.1}), 0.7);
}

TEST(Scores, EntropyExamples) {
  EXPECT_DOUBLE_EQ(entropy_bits(std::vector<double>{0, 1, 0}), 0.0);
  EXPECT_NEAR(entropy_bits(uniform(4)), 2.0, 1e-12);
  EXPECT_NEAR(entropy_bits(uniform(100)), std::log2(100.0), 1e-12);
  EXPECT_NEAR(std::log2(100.0), 6.6439, 1e-4);
}

TEST(Rules, Confidence) {
  EXPECT_TRUE(decide_confidence(uniform(10), 0.0).keep_early);
  EXPECT_FALSE(decide_confidence(std::vector<double>{0.9, 0.1}, 1.0).keep_early);
  EXPECT_TRUE(decide_confidence(std::vector<double>{1.0, 0.0}, 1.0).keep_early);
  EXPECT_TRUE(decide_confidence(std::vector<double>{0.6, 0.3, 0.1}, 0.5).keep_early);
  EXPECT_TRUE(decide_confidence(std::vector<double>{0.5, 0.5}, 0.5).keep_early);
}

TEST(Rules, Entropy) {
  EXPECT_TRUE(decide_entropy(std::vector<double>{0, 1, 0}, 0.1).keep_early);
  EXPECT_FALSE(decide_entropy(uniform(10), 1.0).keep_early);
  EXPECT_TRUE(decide_entropy(uniform(10), std::log2(10.0)).keep_early);
  EXPECT_TRUE(decide_entropy(uniform(8), 3.0).keep_early);
}

TEST(Rules, GroundTruth) {
  EXPECT_TRUE(gt_decision(true, true).keep_early);
  EXPECT_FALSE(gt_decision(false, true).keep_early);
  EXPECT_TRUE(gt_decision(false, false).keep_early);
  EXPECT_TRUE(gt_decision(true, false).keep_early);
}

TEST(Rules, RandomRates) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_TRUE(decide_random(1.0, rng).keep_early);
    EXPECT_FALSE(decide_random(0.0, rng).keep_early);
  }
  int kept = 0;
  for (int i = 0; i < 100000; ++i) kept += decide_random(0.5, rng).keep_early;
  EXPECT_NEAR(kept / 1e5, 0.5, 0.01);
}

TEST(Calibration, CandidateGrid) {
  const auto c = threshold_candidates();
  ASSERT_EQ(c.size(), 21u);
  EXPECT_EQ(c.front(), 0.0);
  EXPECT_EQ(c.back(), 1.0);
  EXPECT_NEAR(c[7], 0.35, 1e-12);
}

TEST(Calibration, SavingsOnlyWeightGivesZeroThresholds) {
  std::vector<CalibrationSample> s;
  std::mt19937_64 g(2);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  for (int i = 0; i < 200; ++i) s.push_back({i % 3, u(g), i % 2 == 0, i % 5 != 0, -10.0 + 5 * (i % 5)});
  const std::vector<double> grid{-10, -5, 0, 5, 10};
  const auto t = calibrate_per_class(s, grid, 0.0, 3);
  for (const auto& row : t.tau)
    for (double v : row) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(t.fallback_classes.empty());
}

TEST(Calibration, AlwaysCorrectEarlyClassKeepsEverything) {
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 50; ++i) s.push_back({0, 0.3 + 0.01 * i, true, i % 2 == 0, i % 2 ? 0.0 : 10.0});
  const std::vector<double> grid{0, 10};
  const auto t = calibrate_per_class(s, grid, 0.7, 1);
  EXPECT_EQ(t.tau[0], (std::vector<double>{0.0, 0.0}));
}

TEST(Calibration, MatchesExhaustiveOracle) {
  const std::vector<double> grid{-10, -5, 0, 5, 10};
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Class 0: early good, class 1: early reliable only when confident, class 2: early poor.
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 900; ++i) {
    const int c = i % 3;
    const double conf = 0.34 + 0.66 * u(g);
    const double snr = grid[static_cast<std::size_t>(i / 3) % grid.size()] + (u(g) - 0.5) * 2.0;
    const double p_early = c == 0 ? 0.9 : (c == 1 ? conf : 0.3);
    const double p_final = 0.5 + 0.04 * (snr + 10.0);
    s.push_back({c, conf, u(g) < p_early, u(g) < p_final, snr});
  }
  for (double w : {0.3, 0.5, 0.8, 1.0}) {
    const auto t = calibrate_per_class(s, grid, w, 3);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t si = 0; si < grid.size(); ++si) {
        std::vector<CalibrationSample> group;
        for (const auto& x : s) {
          if (x.class_pred_early == c && t.nearest_snr_index(x.snr_db) == si) group.push_back(x);
        }
        ASSERT_FALSE(group.empty());
        EXPECT_NEAR(t.tau[c][si], oracle_tau(group, w), 1e-12) << "w=" << w << " c=" << c << " si=" << si;
      }
    }
  }
}

TEST(Calibration, AbsentClassFallsBackToGlobal) {
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 40; ++i) s.push_back({0, 0.5 + 0.01 * i, i > 20, true, 0.0});
  const std::vector<double> grid{0.0};
  const auto t = calibrate_per_class(s, grid, 0.9, 3);
  EXPECT_EQ(t.fallback_classes, (std::vector<int>{1, 2}));
  EXPECT_EQ(t.tau[1][0], t.global_tau[0]);
  EXPECT_EQ(t.tau[2][0], t.global_tau[0]);
  EXPECT_THROW(calibrate_per_class(s, grid, 1.5, 3), ValidationError);
  EXPECT_THROW(calibrate_per_class({}, grid, 0.5, 3), ValidationError);
}

TEST(ThresholdTable, NearestSnrTiesGoLow) {
  auto t = ThresholdTable::constant(2, {-10, -5, 0, 5, 10}, 0.3);
  EXPECT_EQ(t.nearest_snr_index(-7.5), 0u);
  EXPECT_EQ(t.nearest_snr_index(2.5), 2u);
  EXPECT_EQ(t.nearest_snr_index(2.6), 3u);
  EXPECT_EQ(t.nearest_snr_index(-40), 0u);
  EXPECT_EQ(t.nearest_snr_index(40), 4u);
  t.tau[1][3] = 0.9;
  EXPECT_EQ(t.threshold(1, 4.0), 0.9);
  EXPECT_EQ(t.threshold(0, 4.0), 0.3);
  EXPECT_THROW(t.threshold(2, 0.0), ValidationError);
}

TEST(PerClass, ConstantTablesMatchConfidenceRule) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto zeros = ThresholdTable::constant(4, {0.0}, 0.0);
  const auto ones = ThresholdTable::constant(4, {0.0}, 1.0);
  const auto mid = ThresholdTable::constant(4, {-5.0, 5.0}, 0.45);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> p(4);
    double z = 0.0;
    for (auto& v : p) z += (v = u(g));
    for (auto& v : p) v /= z;
    EXPECT_TRUE(decide_per_class(p, 0.0, zeros).keep_early);
    EXPECT_FALSE(decide_per_class(p, 0.0, ones).keep_early);
    EXPECT_EQ(decide_per_class(p, 3.0, mid), decide_confidence(p, 0.45));
  }
  EXPECT_TRUE(decide_per_class(std::vector<double>{0, 0, 1, 0}, 0.0, ones).keep_early);
}

TEST(PerClass, GroundTruthModeDiffersOnlyWhenArgmaxWrong) {
  ThresholdTable t = ThresholdTable::constant(3, {0.0}, 0.0);
  t.tau = {{0.2}, {0.9}, {0.5}};
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int differing = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(3);
    double z = 0.0;
    for (auto& v : p) z += (v = u(g));
    for (auto& v : p) v /= z;
    const int label = i % 3;
    const int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    const auto a = decide_per_class(p, 0.0, t);
    const auto b = decide_per_class(p, 0.0, t, ThresholdSelect::GroundTruth, label);
    if (arg == label) EXPECT_EQ(a, b);
    differing += !(a == b);
  }
  EXPECT_GT(differing, 0);
  EXPECT_THROW(decide_per_class(uniform(3), 0.0, t, ThresholdSelect::GroundTruth), ValidationError);
}

TEST(TdInputs, OrderAndDimension) {
  TdNnConfig cfg;
  cfg.num_classes = 10;
  EXPECT_EQ(cfg.input_dim(), 13u);
  cfg.num_classes = 100;
  EXPECT_EQ(cfg.input_dim(), 103u);
  cfg.num_classes = 3;
  const std::vector<double> p{0.2, 0.5, 0.3};
  const auto x = assemble_td_inputs(p, -7.0, cfg);
  ASSERT_EQ(x.size(), 6u);
  EXPECT_EQ(x[0], 0.2);
  EXPECT_EQ(x[2], 0.3);
  EXPECT_EQ(x[3], 0.5);
  EXPECT_NEAR(x[4], entropy_bits(p), 1e-15);
  EXPECT_NEAR(x[5], -0.7, 1e-15);

  cfg.features = TdFeatureSet::parse({"E", "SNR"});
  EXPECT_EQ(cfg.features.label(), "E+SNR");
  const auto y = assemble_td_inputs(p, 10.0, cfg);
  ASSERT_EQ(y.size(), 2u);
  EXPECT_NEAR(y[1], 1.0, 1e-15);

  cfg.features = TdFeatureSet::parse({"CP"});
  EXPECT_EQ(cfg.input_dim(), 3u);
  cfg.features = TdFeatureSet{};
  EXPECT_THROW(assemble_td_inputs(p, 0.0, cfg), ConfigError);
  EXPECT_THROW(TdFeatureSet::parse({"XX"}), ConfigError);
}

TEST(TdInputs, BatchMatchesSingle) {
  TdNnConfig cfg;
  cfg.num_classes = 2;
  const Tensor probs({2, 2}, {0.9, 0.1, 0.4, 0.6});
  const std::vector<double> snr{-3.0, 4.0};
  const auto b = assemble_td_inputs_batch(probs, snr, cfg);
  ASSERT_EQ(b.shape(), (Shape{2, 5}));
  for (std::size_t r = 0; r < 2; ++r) {
    const std::vector<double> row{probs[r * 2], probs[r * 2 + 1]};
    const auto s = assemble_td_inputs(row, snr[r], cfg);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(b[r * 5 + j], s[j]);
  }
}

TEST(TdNet, TemperedSigmoid) {
  EXPECT_EQ(tempered_sigmoid(0.0, 10.0), 0.5);
  EXPECT_EQ(tempered_sigmoid(0.0, 0.1), 0.5);
  EXPECT_NEAR(tempered_sigmoid(1.0, 10.0), 0.9999546, 1e-7);
}

TEST(TdNet, DecisionInvariantToTemperature) {
  TdNnConfig a;
  a.num_classes = 4;
  a.hidden = 16;
  TdNnConfig b = a;
  b.temperature = 0.3;
  TdNet na(a, 11), nb(b, 11);
  EXPECT_THROW(na.decide(std::vector<double>(7, 0.0)), StateError);
  na.mark_trained();
  nb.mark_trained();
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int kept = 0;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x(7);
    for (auto& v : x) v = u(g);
    const auto oa = na.decide(x), ob = nb.decide(x);
    EXPECT_EQ(oa.decision, ob.decision);
    const double raw = na.raw(Var(Tensor({1, 7}, x))).value()[0];
    EXPECT_NEAR(oa.d_soft, tempered_sigmoid(raw, 10.0), 1e-12);
    EXPECT_EQ(oa.decision.keep_early, raw >= 0.0);
    kept += oa.decision.keep_early;
  }
  EXPECT_GT(kept, 0);
  EXPECT_LT(kept, 300);
}

TEST(TdNet, LayerShapesAndClone) {
  TdNnConfig cfg;
  cfg.num_classes = 100;
  TdNet n(cfg, 1);
  EXPECT_EQ(n.params().numel(), 103u * 256 + 256 + 256 * 256 + 256 + 256 + 1);
  auto c = n.clone();
  EXPECT_EQ(c.params().snapshot(), n.params().snapshot());
  c.params().begin()->second.mutable_value()[0] += 1.0;
  EXPECT_NE(c.params().snapshot(), n.params().snapshot());
  TdNnConfig bad = cfg;
  bad.temperature = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Policy, IdsParamsAndValidation) {
  EXPECT_EQ(policy_id(ConfidencePolicy{0.3}), "confidence");
  EXPECT_EQ(policy_params(ConfidencePolicy{0.3}).at("tau"), 0.3);
  EXPECT_EQ(policy_id(PerClassPolicy{nullptr, ThresholdSelect::GroundTruth}), "per_class_gt");
  EXPECT_EQ(policy_id(GtOraclePolicy{}), "gt_oracle");
  EXPECT_THROW(validate_policy(ConfidencePolicy{1.2}), ValidationError);
  EXPECT_THROW(validate_policy(EntropyPolicy{-0.1}), ValidationError);
  EXPECT_THROW(validate_policy(RandomPolicy{-0.1}), ValidationError);
  EXPECT_THROW(validate_policy(PerClassPolicy{}), StateError);
  EXPECT_THROW(validate_policy(NeuralPolicy{}), StateError);
  EXPECT_NO_THROW(validate_policy(AlwaysEarlyPolicy{}));
}

TEST(Policy, DispatchMatchesRules) {
  Rng rng(7);
  const std::vector<double> p{0.1, 0.7, 0.2};
  DecisionContext ctx{p, 0.0, 0, true};
  EXPECT_FALSE(decide(ConfidencePolicy{0.8}, ctx, rng).keep_early);
  EXPECT_TRUE(decide(EntropyPolicy{2.0}, ctx, rng).keep_early);
  EXPECT_TRUE(decide(AlwaysEarlyPolicy{}, ctx, rng).keep_early);
  EXPECT_FALSE(decide(AlwaysFinalPolicy{}, ctx, rng).keep_early);
  EXPECT_FALSE(decide(GtOraclePolicy{}, ctx, rng).keep_early);
  ctx.label = 1;
  EXPECT_TRUE(decide(GtOraclePolicy{}, ctx, rng).keep_early);
  ctx.label = -1;
  EXPECT_THROW(decide(GtOraclePolicy{}, ctx, rng), ValidationError);
}
