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

#include "onion_audit/lira.h"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "absl/status/status.h"
#include "absl/strings/match.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "oracles.h"

namespace onion_audit {
namespace {

using ::testing::DoubleEq;
using ::testing::DoubleNear;
using ::testing::HasSubstr;
using ::testing::StartsWith;

TEST(FitGaussiansTest, HandComputed) {
  const ObservationMatrix obs = oracle::HandBuilt({{1}, {1}, {0}, {0}}, {{1}, {3}, {0}, {0.5}});
  auto gp = FitGaussians(obs, 0);
  ASSERT_TRUE(gp.ok()) << gp.status();
  EXPECT_THAT(gp->mu_in, DoubleEq(2.0));
  EXPECT_THAT(gp->sigma_in, DoubleEq(std::sqrt(2.0)));
  EXPECT_THAT(gp->mu_out, DoubleEq(0.25));
  EXPECT_THAT(gp->sigma_out, DoubleNear(std::sqrt(0.125), 1e-15));
  EXPECT_EQ(gp->n_in, 2u);
  EXPECT_EQ(gp->n_out, 2u);
  EXPECT_EQ(FitGaussians(obs, 1).status().code(), absl::StatusCode::kOutOfRange);
}

TEST(FitGaussiansTest, SigmaIsClamped) {
  const ObservationMatrix obs = oracle::HandBuilt({{1}, {1}, {0}, {0}}, {{1}, {1}, {2}, {2}});
  auto gp = FitGaussians(obs, 0);
  ASSERT_TRUE(gp.ok());
  EXPECT_EQ(gp->sigma_in, kSigmaFloor);
  EXPECT_EQ(gp->sigma_out, kSigmaFloor);
}

TEST(FitGaussiansTest, HeldOutRowDoesNotMatter) {
  ObservationMatrix obs = oracle::SixByThree();
  const GaussPair before = *FitGaussians(obs, 1, 3);
  obs.gaps[3 * 3 + 1] = 1e6;
  EXPECT_EQ(*FitGaussians(obs, 1, 3), before);
  EXPECT_NE(*FitGaussians(obs, 1), before);
}

TEST(LlrScoreTest, SymmetryAndDominance) {
  const GaussPair gp{.mu_in = 2, .sigma_in = 0.5, .n_in = 3, .mu_out = -1, .sigma_out = 1.5,
                     .n_out = 3};
  const GaussPair swapped{.mu_in = -1, .sigma_in = 1.5, .n_in = 3, .mu_out = 2,
                          .sigma_out = 0.5, .n_out = 3};
  for (double x : {-3.0, -0.5, 0.0, 1.0, 2.0, 4.5}) {
    EXPECT_THAT(LlrScore(x, swapped), DoubleNear(-LlrScore(x, gp), 1e-12)) << x;
    EXPECT_THAT(LlrScore(x, gp),
                DoubleNear(oracle::LogNormalPdf(x, 2, 0.5) - oracle::LogNormalPdf(x, -1, 1.5),
                           1e-12));
  }
  const GaussPair equal{.mu_in = 1, .sigma_in = 1, .mu_out = -1, .sigma_out = 1};
  EXPECT_GT(LlrScore(1.0, equal), 0);
  EXPECT_LT(LlrScore(-1.0, equal), 0);
  EXPECT_EQ(LlrScore(0.0, equal), 0);
  EXPECT_FALSE(PredictMembership(0.0));
  EXPECT_TRUE(PredictMembership(1e-300));
}

TEST(ComputeAsrTest, FrozenSixByThree) {
  auto scores = ComputeAsr(oracle::SixByThree());
  ASSERT_TRUE(scores.ok()) << scores.status();
  ASSERT_EQ(scores->size(), 3u);
  EXPECT_EQ(scores->entries()[0].asr, 1.0);
  EXPECT_EQ(scores->entries()[1].asr, 1.0);
  EXPECT_EQ(scores->entries()[2].asr, 0.83333333333333337);
  for (const ExampleScore& s : scores->entries()) {
    EXPECT_EQ(s.advantage, 2 * s.asr - 1);
    EXPECT_EQ(s.n_evaluations, 6u);
  }
}

TEST(ComputeAsrTest, FrozenLooGrid) {
  const ObservationMatrix obs = oracle::SixByThree();
  auto loo = ComputeLooScores(obs);
  ASSERT_TRUE(loo.ok());
  const int expected[6][3] = {{1, 1, 1}, {1, 1, 1}, {1, 1, 0},
                              {1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  for (size_t m = 0; m < 6; ++m) {
    for (size_t e = 0; e < 3; ++e) {
      const bool correct = PredictMembership(loo->at(m, e)) == obs.membership.included(m, e);
      EXPECT_EQ(correct, expected[m][e] == 1) << m << "," << e;
    }
  }
}

TEST(ComputeAsrTest, MatchesBruteForce) {
  for (uint64_t seed : {1, 2, 3}) {
    const ObservationMatrix obs = oracle::RandomObservations(24, 40, seed);
    const auto expected = oracle::BruteForceAsr(obs);
    auto scores = ComputeAsr(obs);
    ASSERT_TRUE(scores.ok());
    for (size_t e = 0; e < expected.size(); ++e) {
      EXPECT_EQ(scores->entries()[e].asr, expected[e]) << e;
    }
  }
}

TEST(ComputeAsrTest, InvariantUnderPowerOfTwoScaling) {
  ObservationMatrix obs = oracle::RandomObservations(32, 20, 9);
  const PrivacyScores before = *ComputeAsr(obs);
  for (double& g : obs.gaps) g *= 4.0;
  const PrivacyScores after = *ComputeAsr(obs);
  for (size_t e = 0; e < before.size(); ++e) {
    EXPECT_EQ(after.entries()[e].asr, before.entries()[e].asr);
  }
}

TEST(ComputeAsrTest, SeparatedColumnsArePerfect) {
  ObservationMatrix obs = oracle::RandomObservations(16, 10, 4);
  Rng rng(4);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (size_t m = 0; m < obs.n_models(); ++m) {
    for (size_t e = 0; e < obs.n_examples(); ++e) {
      obs.gaps[m * obs.n_examples() + e] =
          (obs.membership.included(m, e) ? 10.0 : -10.0) + noise(rng);
    }
  }
  const PrivacyScores scores = *ComputeAsr(obs);
  for (const ExampleScore& s : scores.entries()) EXPECT_EQ(s.asr, 1.0);
}

TEST(ComputeAsrTest, TooFewObservationsNamesExample) {
  const ObservationMatrix obs = oracle::HandBuilt({{1}, {1}, {0}, {0}}, {{1}, {3}, {0}, {0.5}});
  const auto status = ComputeAsr(obs).status();
  EXPECT_EQ(status.code(), absl::StatusCode::kFailedPrecondition);
  EXPECT_THAT(status.message(), HasSubstr("100"));
}

TEST(RocTest, MatchesBruteForceSweep) {
  Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ScoredPair> pairs;
  for (int i = 0; i < 300; ++i) {
    const bool member = i % 3 == 0;
    // Rounding creates ties.
    pairs.push_back({std::round(4 * (normal(rng) + member)) / 4, member});
  }
  auto roc = RocFromPairs(pairs);
  ASSERT_TRUE(roc.ok());
  const auto expected = oracle::BruteForceSweep(pairs);
  ASSERT_EQ(roc->points.size(), expected.size());
  EXPECT_EQ(roc->points.front().threshold, std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < expected.size(); ++i) {
    EXPECT_THAT(roc->points[i].fpr, DoubleNear(expected[i].first, 1e-15));
    EXPECT_THAT(roc->points[i].tpr, DoubleNear(expected[i].second, 1e-15));
  }
  EXPECT_EQ(roc->points.back().fpr, 1.0);
  EXPECT_EQ(roc->points.back().tpr, 1.0);
  EXPECT_EQ(roc->n_positive, 100u);
  EXPECT_EQ(roc->n_negative, 200u);
  EXPECT_GT(roc->auc, 0.5);
  EXPECT_LT(roc->auc, 1.0);
}

TEST(RocTest, PerfectSeparation) {
  auto roc = RocFromPairs({{3, true}, {2, true}, {1, false}, {0, false}});
  ASSERT_TRUE(roc.ok());
  EXPECT_EQ(roc->auc, 1.0);
  EXPECT_EQ(TprAtFpr(*roc, 0.0), 1.0);
  EXPECT_FALSE(RocFromPairs({{1, true}}).ok());
}

TEST(RocTest, TprAtFprTakesBestPointWithinBudget) {
  RocCurve roc;
  roc.points = {{INFINITY, 0, 0}, {5, 0, 0.2}, {4, 0.01, 0.3}, {3, 0.02, 0.6}, {1, 1, 1}};
  EXPECT_EQ(TprAtFpr(roc, 0.0), 0.2);
  EXPECT_EQ(TprAtFpr(roc, 0.01), 0.3);
  EXPECT_EQ(TprAtFpr(roc, 0.015), 0.3);
  EXPECT_EQ(TprAtFpr(roc, 0.5), 0.6);
  EXPECT_EQ(TprAtFpr(roc, 1.0), 1.0);
}

TEST(RocTest, Restriction) {
  const ObservationMatrix obs = oracle::RandomObservations(16, 10, 6);
  EXPECT_EQ(ComputeRoc(obs, IdSet{}).status().code(), absl::StatusCode::kInvalidArgument);
  EXPECT_EQ(ComputeRoc(obs, IdSet{4}).status().code(), absl::StatusCode::kNotFound);
  auto one = ComputeRoc(obs, IdSet{3});
  ASSERT_TRUE(one.ok());
  EXPECT_EQ(one->n_positive + one->n_negative, 16u);
  auto all = ComputeRoc(obs);
  ASSERT_TRUE(all.ok());
  EXPECT_EQ(all->n_positive + all->n_negative, 160u);
}

TEST(CsvTest, Headers) {
  const PrivacyScores scores = *ComputeAsr(oracle::SixByThree());
  const std::string csv = ScoresCsv(scores);
  EXPECT_THAT(csv, StartsWith("example_id,asr,advantage,n_in,n_out,mu_in,sigma_in,mu_out,"
                              "sigma_out\n100,1,"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const RocCurve roc = *ComputeRoc(oracle::SixByThree());
  EXPECT_THAT(RocCsv(roc), StartsWith("threshold,fpr,tpr\n"));
}

TEST(PrivacyScoresTest, Lookup) {
  const PrivacyScores scores = *ComputeAsr(oracle::SixByThree());
  ASSERT_NE(scores.Find(102), nullptr);
  EXPECT_EQ(scores.Find(102)->id, 102u);
  EXPECT_EQ(scores.Find(7), nullptr);
  EXPECT_EQ(scores.ids(), (IdSet{100, 101, 102}));
}

}  // namespace
}  // namespace onion_audit
