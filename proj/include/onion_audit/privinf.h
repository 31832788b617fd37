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

// Privacy influence: how much removing one example helps the attack on
// another, estimated from the existing shadow ensemble. Also the targeted
// removal and adversarial unlearning experiments built on it.

#ifndef ONION_AUDIT_PRIVINF_H_
#define ONION_AUDIT_PRIVINF_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"
#include "onion_audit/dataset.h"
#include "onion_audit/lira.h"
#include "onion_audit/onion.h"

namespace onion_audit {

struct InfluenceEntry {
  ExampleId candidate_id = 0;
  double privinf = 0.0;
  size_t n_excluded_models = 0;

  friend bool operator==(const InfluenceEntry&, const InfluenceEntry&) = default;
};

struct InfluenceScores {
  ExampleId target_id = 0;
  // Descending privinf, ascending candidate id on ties.
  std::vector<InfluenceEntry> entries;
  // Candidates that no model excluded.
  size_t n_dropped = 0;

  std::vector<ExampleId> TopCandidates(size_t k) const;
};

// privinf(x -> target) is the fraction of models trained without x whose
// leave-one-out prediction on the target is correct. No training happens.
// Only the target column needs enough in/out observations; candidates that
// no model excluded are dropped and counted.
absl::StatusOr<InfluenceScores> ComputePrivInf(const ObservationMatrix& obs,
                                               ExampleId target, int workers = 1);
// Same, reusing precomputed leave-one-out scores.
absl::StatusOr<InfluenceScores> ComputePrivInf(const ObservationMatrix& obs,
                                               const LooScores& loo,
                                               ExampleId target, int workers = 1);
absl::StatusOr<InfluenceScores> ComputePrivInf(const Audit& audit, ExampleId target,
                                               int workers = 1);

// Top-k candidate agreement for one target between two independent audits.
struct InfluenceAgreement {
  ExampleId target_id = 0;
  size_t k = 0;
  size_t overlap = 0;
};

// Both audits must cover the targets. No bound is implied on the overlap.
absl::StatusOr<std::vector<InfluenceAgreement>> CompareInfluence(
    const Audit& a, const Audit& b, const std::vector<ExampleId>& targets, size_t k,
    int workers = 1);

// privinf.csv: target_id,candidate_id,privinf,n_excluded_models
std::string PrivInfCsv(const std::vector<InfluenceScores>& scores);

struct TargetedRemovalResult {
  ExampleId target_id = 0;
  double advantage_before = 0.0;
  double advantage_after = 0.0;
  IdSet removed_ids;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
};

// Removes the target's top-k privinf candidates and retrains. Influence and
// advantage_before come from `reference`, an audit of ds; when null it is
// computed at stage ("targeted", 0). The post-removal ensemble reuses the
// reference stage seeds, so the target keeps its membership pattern.
absl::StatusOr<TargetedRemovalResult> TargetedRemoval(const Dataset& ds,
                                                      const OnionConfig& config,
                                                      ExampleId target, size_t k,
                                                      const Audit* reference = nullptr);

enum class TargetGroup { kDuplicates, kSecondLayer, kRandom, kSafe };

std::string TargetGroupName(TargetGroup group);
absl::StatusOr<TargetGroup> ParseTargetGroup(absl::string_view name);

// Prior experiment outputs a selection may draw on. Only the fields the
// chosen group needs must be set.
struct TargetSources {
  const PrivacyScores* scores = nullptr;    // random, safe
  const DedupOnionResult* dedup = nullptr;  // duplicates; second_layer exclusions
  const OnionResult* onion = nullptr;       // second_layer; random exclusions
  uint64_t seed = 0;
  double safe_threshold = 0.02;
};

// duplicates:   largest asr increase after deduplication among originals
//               whose tagged duplicate was removed.
// second_layer: largest advantage increase after the onion removal, skipping
//               ids in any dedup cluster.
// random:       uniform over scored ids (minus onion-removed ids if known).
// safe:         uniform over ids with advantage below safe_threshold.
// Result is ascending by id.
absl::StatusOr<std::vector<ExampleId>> SelectTargets(TargetGroup group,
                                                     const TargetSources& sources,
                                                     size_t count);

struct UnlearningRound {
  size_t round = 0;
  double advantage = 0.0;
  IdSet removed_ids;  // removed in this round
  double accuracy = 0.0;
};

struct UnlearningReport {
  ExampleId target_id = 0;
  size_t budget = 0;
  // Round 0 is the initial audit; rounds 1..n follow each removal.
  std::vector<UnlearningRound> rounds;

  double InitialAdvantage() const { return rounds.front().advantage; }
  double FinalAdvantage() const { return rounds.back().advantage; }
  std::string ToJson() const;
};

// Five rounds: compute privinf for the target on the current audit, unlearn
// (remove and retrain) the top budget/5 candidates, audit again. All audits
// use stage ("unlearn", 0); `initial` may supply the round-0 audit of ds.
absl::StatusOr<UnlearningReport> AdversarialUnlearningScenario(
    const Dataset& ds, const OnionConfig& config, ExampleId target, size_t budget,
    const Audit* initial = nullptr, size_t n_rounds = 5);

}  // namespace onion_audit

#endif  // ONION_AUDIT_PRIVINF_H_
