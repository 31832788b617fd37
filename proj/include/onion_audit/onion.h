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

// Removal experiments: audit a dataset, remove a layer of examples, audit
// again on the survivors, and compare against the privacy one would have
// predicted by simply ignoring the removed examples.

#ifndef ONION_AUDIT_ONION_H_
#define ONION_AUDIT_ONION_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"
#include "onion_audit/dataset.h"
#include "onion_audit/lira.h"
#include "onion_audit/shadow.h"
#include "onion_audit/trainer.h"

namespace onion_audit {

enum class RemovalMode { kTop, kBottom, kRandom };

std::string RemovalModeName(RemovalMode mode);
absl::StatusOr<RemovalMode> ParseRemovalMode(absl::string_view name);

// kTop: the k highest-asr ids, kBottom: the k lowest; ties go to the smaller
// id in both cases. kRandom: k ids uniformly without replacement from seed.
absl::StatusOr<IdSet> SelectRemoval(const PrivacyScores& scores, size_t k,
                                    RemovalMode mode, uint64_t seed = 0);

struct OnionConfig {
  size_t n_models = 512;
  TrainConfig train_config;
  size_t k = 200;
  RemovalMode mode = RemovalMode::kTop;
  std::vector<double> fpr_grid = {0.001, 0.01, 0.1};
  double subset_prob = 0.5;
  uint64_t master_seed = 1;
  int workers = 1;
  // When set, every ensemble is journaled under
  // store_dir/<stage>-<index>-<dataset hash prefix> and can be resumed row by
  // row.
  std::string store_dir;
  bool resume = false;
  // Optional observer: called with done = 0 when an ensemble starts, after
  // each newly trained row, and with done = total when it finishes.
  std::function<void(std::string_view stage, uint64_t index, size_t done,
                     size_t total)>
      progress;

  absl::Status Validate() const;
};

// Seeds of one ensemble stage. Membership and training seeds both derive
// from (master_seed, stage, index); train_config.seed is ignored.
struct StageSeeds {
  uint64_t membership = 0;
  uint64_t train = 0;
};
StageSeeds SeedsForStage(uint64_t master_seed, std::string_view stage,
                         uint64_t index = 0);

// Trains a fresh ensemble on ds for the given stage and attacks it.
absl::StatusOr<Audit> AuditDataset(const Dataset& ds, const OnionConfig& config,
                                   std::string_view stage, uint64_t index = 0);

struct GapFactor {
  double fpr = 0.0;
  double baseline_tpr = 0.0;
  double idealized_tpr = 0.0;
  double reality_tpr = 0.0;
  double ideal_gain = 0.0;  // baseline / idealized
  double real_gain = 0.0;   // baseline / reality
  double shortfall = 0.0;   // ideal_gain / real_gain
};

GapFactor ComputeGapFactor(const RocCurve& baseline, const RocCurve& idealized,
                           const RocCurve& reality, double fpr);

struct OnionResult {
  RocCurve baseline_roc;
  RocCurve idealized_roc;
  RocCurve reality_roc;
  PrivacyScores scores_before;  // full dataset
  PrivacyScores scores_after;   // retained ids only
  IdSet removed_ids;
  IdSet retained_ids;
  std::vector<GapFactor> gap_factors;  // one per fpr_grid entry
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  // Observation stores behind the two audits (empty when not persisted).
  std::string baseline_source;
  std::string reality_source;
};

// Baseline audit on ds (stage "baseline"), removal by config.mode, idealized
// ROC from the baseline observations restricted to the retained ids, and a
// reality audit on the reduced dataset (stage "reality"). A precomputed
// baseline audit of ds may be supplied to skip the first ensemble.
absl::StatusOr<OnionResult> RunOnion(const Dataset& ds, const OnionConfig& config,
                                     const Audit* baseline = nullptr);

// Builds an OnionResult from a baseline audit, a removal set and a reality
// audit. The reality ROC is restricted to `retained` (which must be present
// in the reality observations).
absl::StatusOr<OnionResult> AssembleOnionResult(const Audit& baseline,
                                                const Audit& reality,
                                                const IdSet& removed,
                                                const IdSet& retained,
                                                const std::vector<double>& fpr_grid);

// Removes the top-k layer, appends ood_count out-of-distribution points and
// retrains. The reality curve and scores_after cover retained original ids
// only.
absl::StatusOr<OnionResult> RunOnionOod(const Dataset& ds, const OnionConfig& config,
                                        size_t ood_count, double shift,
                                        const Audit* baseline = nullptr);

struct AsrDelta {
  ExampleId id = 0;
  double asr_before = 0.0;  // with duplicates present
  double asr_after = 0.0;   // after deduplication
};

struct DedupOnionResult {
  OnionResult onion;  // top-k onion on the deduplicated dataset
  DedupReport report;
  PrivacyScores scores_predup;
  // One entry per surviving original whose tagged duplicate was removed.
  std::vector<AsrDelta> deltas;
  double mean_delta = 0.0;
};

// Audits ds, deduplicates it and runs the top-k onion on the result. Both
// audits share stage seeds, so surviving ids keep their membership patterns.
absl::StatusOr<DedupOnionResult> RunOnionDedup(const Dataset& ds,
                                               const OnionConfig& config,
                                               double threshold);

struct IterativeResult {
  OnionResult final_result;
  std::vector<IdSet> step_removed;
  IdSet oneshot_removed;  // top (step_k * n_steps) of the baseline scores
  double overlap_with_oneshot = 0.0;
};

// n_steps rounds of: remove the top step_k of the current audit, retrain.
// Step s uses stage ("reality", s), so n_steps = 1 reproduces RunOnion with
// k = step_k.
absl::StatusOr<IterativeResult> RunIterative(const Dataset& ds,
                                             const OnionConfig& config,
                                             size_t step_k, size_t n_steps,
                                             const Audit* baseline = nullptr);

struct StabilityResult {
  double pearson_r = 0.0;
  size_t topk_overlap = 0;
  size_t k = 0;
};

// Pearson correlation of asr over the shared ids and overlap of the two
// top-k sets. Both score sets must cover the same ids.
absl::StatusOr<StabilityResult> CompareScores(const PrivacyScores& a,
                                              const PrivacyScores& b, size_t k);

// Two independent ensembles of n_models_per_half models (stages
// ("stability", 0) and ("stability", 1)).
absl::StatusOr<StabilityResult> StabilityCheck(const Dataset& ds,
                                               const OnionConfig& config,
                                               size_t n_models_per_half, size_t k);

// Spread of tpr_at_fpr over seed-replicated baseline audits. Two curves are
// "within band" when their tpr_at_fpr values differ by at most `width`.
struct ToleranceBand {
  double fpr = 0.01;
  std::vector<double> replicate_tprs;
  double width = 0.0;  // 2 * (max - min)

  bool Contains(double a, double b) const;
};

// Produces the dataset of one replicate from its seed. A generated dataset
// should be regenerated from the seed; a fixed dataset is returned as is.
using DatasetSource = std::function<absl::StatusOr<Dataset>(uint64_t seed)>;

// Replicate i audits source(DeriveSeed(master_seed, "replicate", i)) at
// stage ("replicate", i).
absl::StatusOr<ToleranceBand> EstimateBand(const DatasetSource& source,
                                           const OnionConfig& config,
                                           size_t replicates = 5,
                                           double fpr = 0.01);
// Fixed dataset; only the shadow seeds vary.
absl::StatusOr<ToleranceBand> EstimateBand(const Dataset& ds,
                                           const OnionConfig& config,
                                           size_t replicates = 5,
                                           double fpr = 0.01);

// summary.json content for a run.
std::string OnionSummaryJson(const OnionResult& result, const OnionConfig& config,
                             const ToleranceBand* band = nullptr);

}  // namespace onion_audit

#endif  // ONION_AUDIT_ONION_H_
