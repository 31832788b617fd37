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

#include "onion_audit/shadow.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "onion_audit/dataset.h"
#include "onion_audit/trainer.h"

namespace onion_audit {
namespace {

namespace fs = std::filesystem;
using ::testing::HasSubstr;

std::vector<ExampleId> Ids(size_t n) {
  std::vector<ExampleId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

Dataset SmallMixture(size_t n = 80) {
  MixtureParams p{.n = n, .dim = 4, .num_classes = 2, .class_sep = 3, .outlier_frac = 0.1,
                  .seed = 5};
  return *GenerateGaussianMixture(p);
}

TrainConfig Quick() {
  TrainConfig c;
  c.epochs = 5;
  c.seed = 17;
  return c;
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / name;
  fs::remove_all(dir);
  return dir;
}

TEST(SampleMembershipTest, FloorForcesTwoAndTwoAtFourModels) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto mm = SampleMembership({42}, 4, 0.5, seed);
    ASSERT_TRUE(mm.ok());
    size_t in = 0;
    for (size_t m = 0; m < 4; ++m) in += mm->included(m, 0);
    EXPECT_EQ(in, 2u);
  }
}

TEST(SampleMembershipTest, TooFewModelsIsConfigError) {
  EXPECT_EQ(SampleMembership({1, 2}, 3, 0.5, 1).status().code(),
            absl::StatusCode::kInvalidArgument);
  EXPECT_EQ(SampleMembership({1, 2}, 8, 1.0, 1).status().code(),
            absl::StatusCode::kInvalidArgument);
}

TEST(SampleMembershipTest, ColumnMeansConcentrate) {
  auto mm = SampleMembership(Ids(20), 10000, 0.5, 3);
  ASSERT_TRUE(mm.ok());
  for (size_t e = 0; e < 20; ++e) {
    size_t in = 0;
    for (size_t m = 0; m < 10000; ++m) in += mm->included(m, e);
    EXPECT_NEAR(in / 10000.0, 0.5, 0.02) << e;
  }
}

TEST(SampleMembershipTest, DeterministicAndIdBased) {
  auto a = SampleMembership({3, 5, 9}, 16, 0.5, 11);
  auto b = SampleMembership({3, 5, 9}, 16, 0.5, 11);
  EXPECT_EQ(*a, *b);
  // Dropping an id leaves the other columns untouched.
  auto c = SampleMembership({3, 9}, 16, 0.5, 11);
  for (size_t m = 0; m < 16; ++m) {
    EXPECT_EQ(a->included(m, 0), c->included(m, 0));
    EXPECT_EQ(a->included(m, 2), c->included(m, 1));
  }
}

TEST(RunEnsembleTest, MembersHaveLargerGapsOnAverage) {
  std::vector<Example> ex = {{0, {3, 0}, 0, {}}, {1, {0, 3}, 1, {}},
                             {2, {2.5, 0.5}, 0, {}}, {3, {0.5, 2.5}, 1, {}}};
  const Dataset ds = *Dataset::Create(2, 2, ex, {});
  auto mm = SampleMembership(ds.ids(), 4, 0.5, 2);
  ASSERT_TRUE(mm.ok());
  TrainConfig config;
  config.epochs = 30;
  auto obs = RunEnsemble(ds, *mm, config);
  ASSERT_TRUE(obs.ok()) << obs.status();
  double in_sum = 0, out_sum = 0;
  size_t in_n = 0, out_n = 0;
  for (size_t m = 0; m < 4; ++m) {
    for (size_t e = 0; e < 4; ++e) {
      ASSERT_TRUE(std::isfinite(obs->gap(m, e)));
      if (mm->included(m, e)) {
        in_sum += obs->gap(m, e);
        ++in_n;
      } else {
        out_sum += obs->gap(m, e);
        ++out_n;
      }
    }
  }
  EXPECT_GE(in_sum / in_n, out_sum / out_n);
}

TEST(RunEnsembleTest, IndependentOfOrderAndWorkers) {
  const Dataset ds = SmallMixture();
  auto mm = SampleMembership(ds.ids(), 12, 0.5, 4);
  ASSERT_TRUE(mm.ok());
  auto serial = RunEnsemble(ds, *mm, Quick());
  ASSERT_TRUE(serial.ok());
  EnsembleOptions options;
  options.workers = 4;
  options.row_order = {11, 3, 7, 0, 1, 2, 4, 5, 6, 8, 9, 10};
  auto parallel = RunEnsemble(ds, *mm, Quick(), options);
  ASSERT_TRUE(parallel.ok());
  EXPECT_EQ(*serial, *parallel);
  for (double a : serial->model_accuracies) EXPECT_GE(a, 0.5);
}

TEST(RunEnsembleTest, RejectsMismatchedIds) {
  const Dataset ds = SmallMixture();
  auto mm = SampleMembership(Ids(5), 4, 0.5, 4);
  EXPECT_EQ(RunEnsemble(ds, *mm, Quick()).status().code(), absl::StatusCode::kInvalidArgument);
}

TEST(ObserveTargetTest, ZeroModelAndRowConsistency) {
  const Dataset ds = SmallMixture();
  auto zero = ObserveTarget(Model::Zeros(Arch::kLogReg, 4, 2), ds);
  ASSERT_TRUE(zero.ok());
  for (double g : *zero) EXPECT_EQ(g, 0.0);

  auto mm = SampleMembership(ds.ids(), 4, 0.5, 6);
  auto obs = RunEnsemble(ds, *mm, Quick());
  ASSERT_TRUE(obs.ok());
  TrainConfig row_config = Quick();
  row_config.seed = RowTrainSeed(Quick(), 2);
  auto model = Train(ds, mm->Members(2), row_config);
  ASSERT_TRUE(model.ok());
  auto row = ObserveTarget(*model, ds);
  ASSERT_TRUE(row.ok());
  for (size_t e = 0; e < ds.size(); ++e) EXPECT_EQ((*row)[e], obs->gap(2, e));
  EXPECT_FALSE(ObserveTarget(Model::Zeros(Arch::kLogReg, 3, 2), ds).ok());
}

TEST(ObservationStoreTest, RoundTripAndResume) {
  const Dataset ds = SmallMixture();
  auto mm = SampleMembership(ds.ids(), 8, 0.5, 7);
  auto expected = RunEnsemble(ds, *mm, Quick());
  ASSERT_TRUE(expected.ok());

  const fs::path dir = TempDir("store_roundtrip");
  auto stored = RunEnsembleToStore(ds, *mm, Quick(), dir.string(), false);
  ASSERT_TRUE(stored.ok()) << stored.status();
  EXPECT_EQ(*stored, *expected);
  auto loaded = LoadObservationStore(dir.string());
  ASSERT_TRUE(loaded.ok()) << loaded.status();
  EXPECT_EQ(*loaded, *expected);

  // Interrupt after three rows, then resume.
  const fs::path partial = TempDir("store_resume");
  EnsembleOptions stop;
  int seen = 0;
  stop.on_row = [&](const RowResult&) {
    return ++seen == 3 ? absl::AbortedError("interrupted") : absl::OkStatus();
  };
  EXPECT_FALSE(RunEnsembleToStore(ds, *mm, Quick(), partial.string(), false, stop).ok());
  EXPECT_EQ(LoadObservationStore(partial.string()).status().code(),
            absl::StatusCode::kFailedPrecondition);
  int retrained = 0;
  EnsembleOptions count;
  count.on_row = [&](const RowResult&) {
    ++retrained;
    return absl::OkStatus();
  };
  auto resumed = RunEnsembleToStore(ds, *mm, Quick(), partial.string(), true, count);
  ASSERT_TRUE(resumed.ok()) << resumed.status();
  EXPECT_EQ(*resumed, *expected);
  EXPECT_LE(retrained, 6);
}

TEST(ObservationStoreTest, ResumeRejectsDifferentConfig) {
  const Dataset ds = SmallMixture();
  auto mm = SampleMembership(ds.ids(), 4, 0.5, 8);
  const fs::path dir = TempDir("store_mismatch");
  ASSERT_TRUE(RunEnsembleToStore(ds, *mm, Quick(), dir.string(), false).ok());
  TrainConfig other = Quick();
  other.epochs = 6;
  EXPECT_EQ(RunEnsembleToStore(ds, *mm, other, dir.string(), true).status().code(),
            absl::StatusCode::kFailedPrecondition);
}

TEST(ObservationStoreTest, MissingStoreIsNotFound) {
  const auto status = LoadObservationStore(TempDir("nothing_here").string()).status();
  EXPECT_EQ(status.code(), absl::StatusCode::kNotFound);
  EXPECT_THAT(status.message(), HasSubstr("nothing_here"));
}

TEST(PackBitsTest, RoundTrip) {
  const std::vector<uint8_t> cells = {1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1};
  const std::string packed = PackBits(cells);
  EXPECT_EQ(packed.size(), 2u);
  EXPECT_EQ(static_cast<uint8_t>(packed[0]), 0b10001101);
  EXPECT_EQ(UnpackBits(packed, cells.size()), cells);
}

}  // namespace
}  // namespace onion_audit
