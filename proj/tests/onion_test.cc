// Copyright 2026 The Onion Audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "onion_audit/onion.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "absl/status/status.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "json.hpp"
#include "onion_audit/dataset.h"
#include "onion_audit/seeding.h"

namespace onion_audit {
namespace {

using ::testing::DoubleEq;
using ::testing::HasSubstr;

PrivacyScores Scores(const std::vector<std::pair<ExampleId, double>>& asr) {
  std::vector<ExampleScore> v;
  for (const auto& [id, a] : asr) v.push_back({.id = id, .asr = a, .advantage = 2 * a - 1});
  return PrivacyScores(v);
}

TEST(SelectRemovalTest, TiesGoToSmallerId) {
  const PrivacyScores s = Scores({{1, 0.9}, {2, 0.7}, {3, 0.7}, {4, 0.5}});
  EXPECT_EQ(*SelectRemoval(s, 2, RemovalMode::kTop), (IdSet{1, 2}));
  EXPECT_EQ(*SelectRemoval(s, 2, RemovalMode::kBottom), (IdSet{2, 4}));
  EXPECT_TRUE(SelectRemoval(s, 0, RemovalMode::kTop)->empty());
  EXPECT_EQ(SelectRemoval(s, 5, RemovalMode::kTop).status().code(),
            absl::StatusCode::kInvalidArgument);
}

TEST(SelectRemovalTest, MatchesSortOracle) {
  Rng rng(3);
  std::uniform_int_distribution<int> grid(0, 20);
  std::vector<std::pair<ExampleId, double>> raw;
  for (ExampleId id = 0; id < 300; ++id) raw.push_back({id * 7 + 1, grid(rng) / 20.0});
  const PrivacyScores s = Scores(raw);
  std::vector<std::pair<ExampleId, double>> sorted = raw;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (size_t k : {1, 17, 150, 299}) {
    IdSet expected;
    for (size_t i = 0; i < k; ++i) expected.insert(sorted[i].first);
    EXPECT_EQ(*SelectRemoval(s, k, RemovalMode::kTop), expected) << k;
  }
}

TEST(SelectRemovalTest, RandomIsSeededAndSized) {
  std::vector<std::pair<ExampleId, double>> raw;
  for (ExampleId id = 0; id < 50; ++id) raw.push_back({id, 0.5});
  const PrivacyScores s = Scores(raw);
  const IdSet a = *SelectRemoval(s, 10, RemovalMode::kRandom, 8);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(*SelectRemoval(s, 10, RemovalMode::kRandom, 8), a);
  EXPECT_NE(*SelectRemoval(s, 10, RemovalMode::kRandom, 9), a);
}

TEST(RemovalModeTest, Names) {
  for (RemovalMode m : {RemovalMode::kTop, RemovalMode::kBottom, RemovalMode::kRandom}) {
    EXPECT_EQ(*ParseRemovalMode(RemovalModeName(m)), m);
  }
  EXPECT_THAT(ParseRemovalMode("middle").status().message(), HasSubstr("middle"));
}

TEST(GapFactorTest, Arithmetic) {
  RocCurve baseline, idealized, reality;
  baseline.points = {{INFINITY, 0, 0}, {1, 0.01, 0.3}, {0, 1, 1}};
  idealized.points = {{INFINITY, 0, 0}, {1, 0.01, 0.1}, {0, 1, 1}};
  reality.points = {{INFINITY, 0, 0}, {1, 0.01, 0.25}, {0, 1, 1}};
  const GapFactor g = ComputeGapFactor(baseline, idealized, reality, 0.01);
  EXPECT_EQ(g.baseline_tpr, 0.3);
  EXPECT_THAT(g.ideal_gain, DoubleEq(3.0));
  EXPECT_THAT(g.real_gain, DoubleEq(1.2));
  EXPECT_THAT(g.shortfall, DoubleEq(2.5));
  const GapFactor zero = ComputeGapFactor(baseline, idealized, reality, 0.0);
  EXPECT_TRUE(std::isnan(zero.shortfall));
}

TEST(SeedsForStageTest, DistinctAndStable) {
  const StageSeeds a = SeedsForStage(1, "baseline");
  EXPECT_EQ(a.membership, SeedsForStage(1, "baseline").membership);
  EXPECT_NE(a.membership, a.train);
  EXPECT_NE(a.membership, SeedsForStage(1, "reality").membership);
  EXPECT_NE(a.membership, SeedsForStage(2, "baseline").membership);
  EXPECT_NE(SeedsForStage(1, "reality", 0).train, SeedsForStage(1, "reality", 1).train);
}

TEST(OnionConfigTest, Validation) {
  OnionConfig c;
  EXPECT_TRUE(c.Validate().ok());
  c.n_models = 3;
  EXPECT_FALSE(c.Validate().ok());
  c = OnionConfig{};
  c.fpr_grid = {0.0};
  EXPECT_FALSE(c.Validate().ok());
  c = OnionConfig{};
  c.workers = 0;
  EXPECT_FALSE(c.Validate().ok());
}

TEST(CompareScoresTest, IdenticalAndMismatched) {
  const PrivacyScores s = Scores({{1, 0.9}, {2, 0.4}, {3, 0.6}, {4, 0.5}});
  auto r = CompareScores(s, s, 2);
  ASSERT_TRUE(r.ok());
  EXPECT_THAT(r->pearson_r, DoubleEq(1.0));
  EXPECT_EQ(r->topk_overlap, 2u);
  const PrivacyScores flipped = Scores({{1, 0.1}, {2, 0.6}, {3, 0.4}, {4, 0.5}});
  EXPECT_THAT(CompareScores(s, flipped, 2)->pearson_r, DoubleEq(-1.0));
  EXPECT_FALSE(CompareScores(s, Scores({{1, 0.9}}), 1).ok());
}

TEST(ToleranceBandTest, Contains) {
  ToleranceBand band;
  band.width = 0.01;
  EXPECT_TRUE(band.Contains(0.10, 0.105));
  EXPECT_TRUE(band.Contains(0.105, 0.10));
  EXPECT_FALSE(band.Contains(0.10, 0.12));
}

// Small end-to-end runs share one dataset and one baseline audit.
class OnionRunTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    MixtureParams p{.n = 120, .dim = 4, .num_classes = 2, .class_sep = 2, .outlier_frac = 0.1,
                    .seed = 9};
    ds_ = new Dataset(*GenerateGaussianMixture(p));
    config_ = new OnionConfig;
    config_->n_models = 32;
    config_->train_config.epochs = 3;
    config_->k = 10;
    config_->master_seed = 4;
    baseline_ = new Audit(*AuditDataset(*ds_, *config_, "baseline"));
    onion_ = new OnionResult(*RunOnion(*ds_, *config_, baseline_));
  }
  static void TearDownTestSuite() {
    delete onion_;
    delete baseline_;
    delete config_;
    delete ds_;
  }

  static void ExpectSameOnion(const OnionResult& a, const OnionResult& b) {
    EXPECT_EQ(a.removed_ids, b.removed_ids);
    EXPECT_EQ(a.retained_ids, b.retained_ids);
    EXPECT_EQ(a.scores_before, b.scores_before);
    EXPECT_EQ(a.scores_after, b.scores_after);
    ASSERT_EQ(a.gap_factors.size(), b.gap_factors.size());
    for (size_t i = 0; i < a.gap_factors.size(); ++i) {
      EXPECT_EQ(a.gap_factors[i].reality_tpr, b.gap_factors[i].reality_tpr);
      EXPECT_EQ(a.gap_factors[i].idealized_tpr, b.gap_factors[i].idealized_tpr);
    }
  }

  static Dataset* ds_;
  static OnionConfig* config_;
  static Audit* baseline_;
  static OnionResult* onion_;
};

Dataset* OnionRunTest::ds_ = nullptr;
OnionConfig* OnionRunTest::config_ = nullptr;
Audit* OnionRunTest::baseline_ = nullptr;
OnionResult* OnionRunTest::onion_ = nullptr;

TEST_F(OnionRunTest, RemovedAndRetainedPartitionTheDataset) {
  EXPECT_EQ(onion_->removed_ids.size(), 10u);
  EXPECT_EQ(onion_->retained_ids.size(), 110u);
  for (ExampleId id : onion_->removed_ids) EXPECT_FALSE(onion_->retained_ids.contains(id));
  EXPECT_EQ(onion_->scores_after.ids(), onion_->retained_ids);
  EXPECT_EQ(onion_->removed_ids, *SelectRemoval(baseline_->scores, 10, RemovalMode::kTop));
  EXPECT_EQ(onion_->gap_factors.size(), config_->fpr_grid.size());
}

TEST_F(OnionRunTest, BaselineIsReproducible) {
  auto again = RunOnion(*ds_, *config_);
  ASSERT_TRUE(again.ok()) << again.status();
  ExpectSameOnion(*onion_, *again);
}

TEST_F(OnionRunTest, ZeroOodReducesToPlainOnion) {
  auto ood = RunOnionOod(*ds_, *config_, 0, 10.0, baseline_);
  ASSERT_TRUE(ood.ok()) << ood.status();
  ExpectSameOnion(*onion_, *ood);
}

TEST_F(OnionRunTest, DedupWithoutDuplicatesReducesToPlainOnion) {
  auto dedup = RunOnionDedup(*ds_, *config_, 0.999999);
  ASSERT_TRUE(dedup.ok()) << dedup.status();
  EXPECT_TRUE(dedup->report.removed_ids.empty());
  EXPECT_TRUE(dedup->deltas.empty());
  EXPECT_EQ(dedup->scores_predup, baseline_->scores);
  ExpectSameOnion(*onion_, dedup->onion);
}

TEST_F(OnionRunTest, SingleIterationReducesToPlainOnion) {
  auto iter = RunIterative(*ds_, *config_, 10, 1, baseline_);
  ASSERT_TRUE(iter.ok()) << iter.status();
  ExpectSameOnion(*onion_, iter->final_result);
  EXPECT_EQ(iter->overlap_with_oneshot, 1.0);
  EXPECT_EQ(RunIterative(*ds_, *config_, 60, 2, baseline_).status().code(),
            absl::StatusCode::kInvalidArgument);
}

TEST_F(OnionRunTest, IterativeStepsAreDisjoint) {
  auto iter = RunIterative(*ds_, *config_, 5, 3, baseline_);
  ASSERT_TRUE(iter.ok()) << iter.status();
  ASSERT_EQ(iter->step_removed.size(), 3u);
  IdSet all;
  for (const IdSet& layer : iter->step_removed) {
    EXPECT_EQ(layer.size(), 5u);
    all.insert(layer.begin(), layer.end());
  }
  EXPECT_EQ(all.size(), 15u);
  EXPECT_EQ(all, iter->final_result.removed_ids);
  EXPECT_EQ(iter->oneshot_removed, *SelectRemoval(baseline_->scores, 15, RemovalMode::kTop));
}

TEST_F(OnionRunTest, KMustLeaveExamples) {
  OnionConfig big = *config_;
  big.k = 120;
  EXPECT_EQ(RunOnion(*ds_, big, baseline_).status().code(), absl::StatusCode::kInvalidArgument);
}

TEST_F(OnionRunTest, SummaryJsonFields) {
  const auto j = nlohmann::json::parse(OnionSummaryJson(*onion_, *config_));
  EXPECT_EQ(j.at("k").get<size_t>(), 10u);
  EXPECT_EQ(j.at("gap_factors").size(), config_->fpr_grid.size());
}

TEST_F(OnionRunTest, BandFromFixedDataset) {
  auto band = EstimateBand(*ds_, *config_, 3);
  ASSERT_TRUE(band.ok()) << band.status();
  EXPECT_EQ(band->replicate_tprs.size(), 3u);
  const auto [lo, hi] =
      std::minmax_element(band->replicate_tprs.begin(), band->replicate_tprs.end());
  EXPECT_EQ(band->width, 2 * (*hi - *lo));
  EXPECT_FALSE(EstimateBand(*ds_, *config_, 1).ok());
}

}  // namespace
}  // namespace onion_audit
