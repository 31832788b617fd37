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

#include "onion_audit/privinf.h"

#include <algorithm>
#include <utility>

#include "absl/strings/str_cat.h"
#include "json.hpp"
#include "onion_audit/io.h"
#include "onion_audit/parallel.h"
#include "onion_audit/seeding.h"

namespace onion_audit {
namespace {

using json = nlohmann::ordered_json;

// Highest value first, then ascending id; returns the first `count` ids.
std::vector<ExampleId> TopByValue(std::vector<std::pair<double, ExampleId>> items,
                                  size_t count) {
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<ExampleId> out;
  for (size_t i = 0; i < count && i < items.size(); ++i) out.push_back(items[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ExampleId> SampleIds(const std::vector<ExampleId>& pool, size_t count,
                                 uint64_t seed) {
  Rng rng(seed);
  std::vector<ExampleId> out;
  for (size_t i : SampleWithoutReplacement(pool.size(), count, rng)) {
    out.push_back(pool[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

absl::Status EmptyGroup(TargetGroup group, absl::string_view why) {
  return absl::InvalidArgumentError(
      absl::StrCat("group ", TargetGroupName(group), ": ", why));
}

}  // namespace

std::vector<ExampleId> InfluenceScores::TopCandidates(size_t k) const {
  std::vector<ExampleId> out;
  for (size_t i = 0; i < k && i < entries.size(); ++i) {
    out.push_back(entries[i].candidate_id);
  }
  return out;
}

namespace {

absl::StatusOr<InfluenceScores> PrivInfFromCorrectness(const ObservationMatrix& obs,
                                                       size_t target_col,
                                                       const std::vector<uint8_t>& correct,
                                                       int workers) {
  const size_t n_models = obs.n_models();
  const size_t n_examples = obs.n_examples();
  std::vector<InfluenceEntry> all(n_examples);
  ParallelFor(n_examples, workers, [&](size_t x) {
    size_t excluded = 0, hits = 0;
    for (size_t m = 0; m < n_models; ++m) {
      if (obs.membership.included(m, x)) continue;
      ++excluded;
      hits += correct[m];
    }
    all[x].candidate_id = obs.membership.example_ids()[x];
    all[x].n_excluded_models = excluded;
    all[x].privinf =
        excluded == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(excluded);
  });

  InfluenceScores out;
  out.target_id = obs.membership.example_ids()[target_col];
  for (size_t x = 0; x < n_examples; ++x) {
    if (x == target_col) continue;
    if (all[x].n_excluded_models == 0) {
      ++out.n_dropped;
      continue;
    }
    out.entries.push_back(all[x]);
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const InfluenceEntry& a, const InfluenceEntry& b) {
              if (a.privinf != b.privinf) return a.privinf > b.privinf;
              return a.candidate_id < b.candidate_id;
            });
  return out;
}

absl::StatusOr<size_t> TargetColumn(const ObservationMatrix& obs, ExampleId target) {
  auto col = obs.membership.ColumnOf(target);
  if (!col) {
    return absl::NotFoundError(absl::StrCat("target ", target, " is not in the observations"));
  }
  return *col;
}

}  // namespace

absl::StatusOr<InfluenceScores> ComputePrivInf(const ObservationMatrix& obs,
                                               ExampleId target, int workers) {
  auto col = TargetColumn(obs, target);
  if (!col.ok()) return col.status();
  auto scores = ComputeLooColumn(obs, *col);
  if (!scores.ok()) return scores.status();
  std::vector<uint8_t> correct(obs.n_models());
  for (size_t m = 0; m < obs.n_models(); ++m) {
    correct[m] = PredictMembership((*scores)[m]) == obs.membership.included(m, *col);
  }
  return PrivInfFromCorrectness(obs, *col, correct, workers);
}

absl::StatusOr<InfluenceScores> ComputePrivInf(const ObservationMatrix& obs,
                                               const LooScores& loo,
                                               ExampleId target, int workers) {
  auto col = TargetColumn(obs, target);
  if (!col.ok()) return col.status();
  if (loo.n_models != obs.n_models() || loo.n_examples != obs.n_examples()) {
    return absl::InvalidArgumentError("leave-one-out scores do not match observations");
  }
  std::vector<uint8_t> correct(obs.n_models());
  for (size_t m = 0; m < obs.n_models(); ++m) {
    correct[m] = PredictMembership(loo.at(m, *col)) == obs.membership.included(m, *col);
  }
  return PrivInfFromCorrectness(obs, *col, correct, workers);
}

absl::StatusOr<InfluenceScores> ComputePrivInf(const Audit& audit, ExampleId target,
                                               int workers) {
  return ComputePrivInf(audit.obs, audit.loo, target, workers);
}

absl::StatusOr<std::vector<InfluenceAgreement>> CompareInfluence(
    const Audit& a, const Audit& b, const std::vector<ExampleId>& targets, size_t k,
    int workers) {
  std::vector<InfluenceAgreement> out;
  for (ExampleId target : targets) {
    auto pa = ComputePrivInf(a, target, workers);
    if (!pa.ok()) return pa.status();
    auto pb = ComputePrivInf(b, target, workers);
    if (!pb.ok()) return pb.status();
    const std::vector<ExampleId> top_a = pa->TopCandidates(k);
    const std::vector<ExampleId> top_b = pb->TopCandidates(k);
    const IdSet in_b(top_b.begin(), top_b.end());
    InfluenceAgreement agreement{.target_id = target, .k = k};
    for (ExampleId id : top_a) agreement.overlap += in_b.contains(id);
    out.push_back(agreement);
  }
  return out;
}

std::string PrivInfCsv(const std::vector<InfluenceScores>& scores) {
  std::string out = "target_id,candidate_id,privinf,n_excluded_models\n";
  for (const InfluenceScores& s : scores) {
    for (const InfluenceEntry& e : s.entries) {
      absl::StrAppend(&out, s.target_id, ",", e.candidate_id, ",",
                      FormatDouble(e.privinf), ",", e.n_excluded_models, "\n");
    }
  }
  return out;
}

absl::StatusOr<TargetedRemovalResult> TargetedRemoval(const Dataset& ds,
                                                      const OnionConfig& config,
                                                      ExampleId target, size_t k,
                                                      const Audit* reference) {
  if (!ds.Contains(target)) {
    return absl::NotFoundError(absl::StrCat("target ", target, " is not in the dataset"));
  }
  if (k + 1 >= ds.size()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "k: ", k, " must be smaller than the dataset size minus one (", ds.size() - 1, ")"));
  }
  Audit own;
  if (reference == nullptr) {
    auto audit = AuditDataset(ds, config, "targeted");
    if (!audit.ok()) return audit.status();
    own = *std::move(audit);
    reference = &own;
  }
  const ExampleScore* before = reference->scores.Find(target);
  if (before == nullptr) {
    return absl::NotFoundError(absl::StrCat("target ", target, " has no reference score"));
  }
  auto influence = ComputePrivInf(*reference, target, config.workers);
  if (!influence.ok()) return influence.status();

  TargetedRemovalResult r;
  r.target_id = target;
  r.advantage_before = before->advantage;
  r.accuracy_before = reference->obs.MeanAccuracy();
  for (ExampleId id : influence->TopCandidates(k)) r.removed_ids.insert(id);
  auto reduced = RemoveExamples(ds, r.removed_ids);
  if (!reduced.ok()) return reduced.status();
  auto after = AuditDataset(*reduced, config, "targeted");
  if (!after.ok()) return after.status();
  const ExampleScore* score = after->scores.Find(target);
  if (score == nullptr) {
    return absl::InternalError(absl::StrCat("target ", target, " vanished from the audit"));
  }
  r.advantage_after = score->advantage;
  r.accuracy_after = after->obs.MeanAccuracy();
  return r;
}

std::string TargetGroupName(TargetGroup group) {
  switch (group) {
    case TargetGroup::kDuplicates:
      return "duplicates";
    case TargetGroup::kSecondLayer:
      return "second_layer";
    case TargetGroup::kRandom:
      return "random";
    case TargetGroup::kSafe:
      return "safe";
  }
  return "unknown";
}

absl::StatusOr<TargetGroup> ParseTargetGroup(absl::string_view name) {
  if (name == "duplicates") return TargetGroup::kDuplicates;
  if (name == "second_layer") return TargetGroup::kSecondLayer;
  if (name == "random") return TargetGroup::kRandom;
  if (name == "safe") return TargetGroup::kSafe;
  return absl::InvalidArgumentError(absl::StrCat(
      "group: expected duplicates, second_layer, random or safe, got '", name, "'"));
}

absl::StatusOr<std::vector<ExampleId>> SelectTargets(TargetGroup group,
                                                     const TargetSources& sources,
                                                     size_t count) {
  std::vector<std::pair<double, ExampleId>> ranked;
  std::vector<ExampleId> pool;
  switch (group) {
    case TargetGroup::kDuplicates: {
      if (sources.dedup == nullptr) {
        return EmptyGroup(group, "requires a deduplication experiment");
      }
      for (const AsrDelta& d : sources.dedup->deltas) {
        ranked.push_back({d.asr_after - d.asr_before, d.id});
      }
      if (ranked.empty()) return EmptyGroup(group, "deduplication removed nothing");
      return TopByValue(std::move(ranked), count);
    }
    case TargetGroup::kSecondLayer: {
      if (sources.onion == nullptr) {
        return EmptyGroup(group, "requires an onion experiment");
      }
      IdSet clustered;
      if (sources.dedup != nullptr) {
        for (const auto& cluster : sources.dedup->report.clusters) {
          clustered.insert(cluster.begin(), cluster.end());
        }
      }
      for (const ExampleScore& after : sources.onion->scores_after.entries()) {
        if (clustered.contains(after.id)) continue;
        const ExampleScore* before = sources.onion->scores_before.Find(after.id);
        if (before == nullptr) continue;
        ranked.push_back({after.advantage - before->advantage, after.id});
      }
      if (ranked.empty()) return EmptyGroup(group, "no eligible retained examples");
      return TopByValue(std::move(ranked), count);
    }
    case TargetGroup::kRandom: {
      if (sources.scores == nullptr) return EmptyGroup(group, "requires privacy scores");
      for (const ExampleScore& s : sources.scores->entries()) {
        if (sources.onion != nullptr && sources.onion->removed_ids.contains(s.id)) continue;
        pool.push_back(s.id);
      }
      if (pool.empty()) return EmptyGroup(group, "no eligible examples");
      return SampleIds(pool, count, DeriveSeed(sources.seed, "targets", 2));
    }
    case TargetGroup::kSafe: {
      if (sources.scores == nullptr) return EmptyGroup(group, "requires privacy scores");
      for (const ExampleScore& s : sources.scores->entries()) {
        if (s.advantage < sources.safe_threshold) pool.push_back(s.id);
      }
      if (pool.empty()) {
        return EmptyGroup(group, absl::StrCat("no example has advantage below ",
                                              sources.safe_threshold));
      }
      return SampleIds(pool, count, DeriveSeed(sources.seed, "targets", 3));
    }
  }
  return absl::InternalError("unhandled target group");
}

std::string UnlearningReport::ToJson() const {
  json j;
  j["target_id"] = target_id;
  j["budget"] = budget;
  json rounds_json = json::array();
  for (const UnlearningRound& r : rounds) {
    rounds_json.push_back({{"round", r.round},
                           {"advantage", r.advantage},
                           {"accuracy", r.accuracy},
                           {"removed_ids", std::vector<ExampleId>(r.removed_ids.begin(),
                                                                  r.removed_ids.end())}});
  }
  j["rounds"] = rounds_json;
  return j.dump(2) + "\n";
}

absl::StatusOr<UnlearningReport> AdversarialUnlearningScenario(
    const Dataset& ds, const OnionConfig& config, ExampleId target, size_t budget,
    const Audit* initial, size_t n_rounds) {
  if (!ds.Contains(target)) {
    return absl::NotFoundError(absl::StrCat("target ", target, " is not in the dataset"));
  }
  if (budget + 1 >= ds.size()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "budget: ", budget, " must be smaller than the dataset size minus one"));
  }
  if (n_rounds == 0) return absl::InvalidArgumentError("n_rounds: must be positive");
  Audit current_audit;
  if (initial != nullptr) {
    current_audit = *initial;
  } else {
    auto audit = AuditDataset(ds, config, "unlearn");
    if (!audit.ok()) return audit.status();
    current_audit = *std::move(audit);
  }
  UnlearningReport report;
  report.target_id = target;
  report.budget = budget;
  auto record = [&](size_t round, IdSet removed) -> absl::Status {
    const ExampleScore* s = current_audit.scores.Find(target);
    if (s == nullptr) {
      return absl::InternalError(absl::StrCat("target ", target, " vanished from the audit"));
    }
    report.rounds.push_back(
        {round, s->advantage, std::move(removed), current_audit.obs.MeanAccuracy()});
    return absl::OkStatus();
  };
  if (auto s = record(0, {}); !s.ok()) return s;

  Dataset current = ds;
  for (size_t round = 1; round <= n_rounds; ++round) {
    const size_t step = budget * round / n_rounds - budget * (round - 1) / n_rounds;
    auto influence = ComputePrivInf(current_audit, target, config.workers);
    if (!influence.ok()) return influence.status();
    IdSet removed;
    for (ExampleId id : influence->TopCandidates(step)) removed.insert(id);
    auto next = RemoveExamples(current, removed);
    if (!next.ok()) return next.status();
    current = *std::move(next);
    auto audit = AuditDataset(current, config, "unlearn");
    if (!audit.ok()) return audit.status();
    current_audit = *std::move(audit);
    if (auto s = record(round, std::move(removed)); !s.ok()) return s;
  }
  return report;
}

}  // namespace onion_audit
