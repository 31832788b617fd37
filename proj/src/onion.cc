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
#include <limits>
#include <utility>

#include "absl/strings/str_cat.h"
#include "json.hpp"
#include "onion_audit/io.h"
#include "onion_audit/seeding.h"

namespace onion_audit {
namespace {

using json = nlohmann::ordered_json;

double SafeRatio(double num, double den) {
  if (den == 0.0) {
    return num == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                      : std::numeric_limits<double>::infinity();
  }
  return num / den;
}

// JSON has no inf/nan; encode them as strings.
json JsonNumber(double v) {
  if (std::isfinite(v)) return v;
  return FormatDouble(v);
}

IdSet Difference(const IdSet& all, const IdSet& removed) {
  IdSet out;
  std::set_difference(all.begin(), all.end(), removed.begin(), removed.end(),
                      std::inserter(out, out.end()));
  return out;
}

PrivacyScores Restrict(const PrivacyScores& scores, const IdSet& ids) {
  std::vector<ExampleScore> kept;
  for (const ExampleScore& s : scores.entries()) {
    if (ids.contains(s.id)) kept.push_back(s);
  }
  return PrivacyScores(std::move(kept));
}

}  // namespace

std::string RemovalModeName(RemovalMode mode) {
  switch (mode) {
    case RemovalMode::kTop:
      return "top";
    case RemovalMode::kBottom:
      return "bottom";
    case RemovalMode::kRandom:
      return "random";
  }
  return "unknown";
}

absl::StatusOr<RemovalMode> ParseRemovalMode(absl::string_view name) {
  if (name == "top") return RemovalMode::kTop;
  if (name == "bottom") return RemovalMode::kBottom;
  if (name == "random") return RemovalMode::kRandom;
  return absl::InvalidArgumentError(
      absl::StrCat("mode: expected top, bottom or random, got '", name, "'"));
}

absl::StatusOr<IdSet> SelectRemoval(const PrivacyScores& scores, size_t k,
                                    RemovalMode mode, uint64_t seed) {
  if (k > scores.size()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "k: ", k, " exceeds the number of scored examples (", scores.size(), ")"));
  }
  const std::vector<ExampleScore>& entries = scores.entries();
  IdSet out;
  if (mode == RemovalMode::kRandom) {
    Rng rng(seed);
    for (size_t i : SampleWithoutReplacement(entries.size(), k, rng)) {
      out.insert(entries[i].id);
    }
    return out;
  }
  std::vector<const ExampleScore*> order;
  order.reserve(entries.size());
  for (const ExampleScore& s : entries) order.push_back(&s);
  const bool top = mode == RemovalMode::kTop;
  std::stable_sort(order.begin(), order.end(),
                   [top](const ExampleScore* a, const ExampleScore* b) {
                     if (a->asr != b->asr) return top ? a->asr > b->asr : a->asr < b->asr;
                     return a->id < b->id;
                   });
  for (size_t i = 0; i < k; ++i) out.insert(order[i]->id);
  return out;
}

absl::Status OnionConfig::Validate() const {
  if (n_models < 4) return absl::InvalidArgumentError("n_models: must be at least 4");
  if (!(subset_prob > 0.0 && subset_prob < 1.0)) {
    return absl::InvalidArgumentError("subset_prob: must lie in (0, 1)");
  }
  if (workers < 1) return absl::InvalidArgumentError("workers: must be at least 1");
  for (double f : fpr_grid) {
    if (!(f > 0.0 && f <= 1.0)) {
      return absl::InvalidArgumentError("fpr_grid: entries must lie in (0, 1]");
    }
  }
  return train_config.Validate();
}

StageSeeds SeedsForStage(uint64_t master_seed, std::string_view stage,
                         uint64_t index) {
  const uint64_t base = DeriveSeed(master_seed, stage, index);
  return {DeriveSeed(base, "membership"), DeriveSeed(base, "train")};
}

absl::StatusOr<Audit> AuditDataset(const Dataset& ds, const OnionConfig& config,
                                   std::string_view stage, uint64_t index) {
  if (auto s = config.Validate(); !s.ok()) return s;
  const StageSeeds seeds = SeedsForStage(config.master_seed, stage, index);
  auto mm = SampleMembership(ds.ids(), config.n_models, config.subset_prob,
                             seeds.membership);
  if (!mm.ok()) return mm.status();
  TrainConfig tc = config.train_config;
  tc.seed = seeds.train;
  EnsembleOptions options;
  options.workers = config.workers;
  size_t done = 0;
  if (config.progress) {
    config.progress(stage, index, 0, config.n_models);
    options.on_row = [&](const RowResult&) {
      config.progress(stage, index, ++done, config.n_models);
      return absl::OkStatus();
    };
  }
  absl::StatusOr<ObservationMatrix> obs;
  std::string source;
  if (config.store_dir.empty()) {
    obs = RunEnsemble(ds, *mm, tc, options);
  } else {
    source = absl::StrCat(config.store_dir, "/", std::string(stage), "-", index, "-",
                          GitBlobHash(SerializeDataset(ds)).substr(0, 8));
    obs = RunEnsembleToStore(ds, *mm, tc, source, config.resume, std::move(options));
  }
  if (!obs.ok()) return obs.status();
  if (config.progress && done != config.n_models) {
    config.progress(stage, index, config.n_models, config.n_models);
  }
  auto audit = AuditObservations(*std::move(obs));
  if (!audit.ok()) return audit.status();
  audit->source = std::move(source);
  return audit;
}

GapFactor ComputeGapFactor(const RocCurve& baseline, const RocCurve& idealized,
                           const RocCurve& reality, double fpr) {
  GapFactor g;
  g.fpr = fpr;
  g.baseline_tpr = TprAtFpr(baseline, fpr);
  g.idealized_tpr = TprAtFpr(idealized, fpr);
  g.reality_tpr = TprAtFpr(reality, fpr);
  g.ideal_gain = SafeRatio(g.baseline_tpr, g.idealized_tpr);
  g.real_gain = SafeRatio(g.baseline_tpr, g.reality_tpr);
  g.shortfall = SafeRatio(g.reality_tpr, g.idealized_tpr);
  return g;
}

absl::StatusOr<OnionResult> AssembleOnionResult(const Audit& baseline,
                                                const Audit& reality,
                                                const IdSet& removed,
                                                const IdSet& retained,
                                                const std::vector<double>& fpr_grid) {
  for (ExampleId id : removed) {
    if (retained.contains(id)) {
      return absl::InternalError(
          absl::StrCat("example ", id, " is both removed and retained"));
    }
  }
  OnionResult r;
  r.removed_ids = removed;
  r.retained_ids = retained;
  auto base_roc = ComputeRoc(baseline.obs, baseline.loo);
  if (!base_roc.ok()) return base_roc.status();
  r.baseline_roc = *std::move(base_roc);
  auto ideal = ComputeRoc(baseline.obs, baseline.loo, retained);
  if (!ideal.ok()) return ideal.status();
  r.idealized_roc = *std::move(ideal);
  auto real = ComputeRoc(reality.obs, reality.loo, retained);
  if (!real.ok()) return real.status();
  r.reality_roc = *std::move(real);
  // Both curves must pool the same examples over the same number of models.
  if (r.idealized_roc.n_positive + r.idealized_roc.n_negative !=
      retained.size() * baseline.obs.n_models()) {
    return absl::InternalError("idealized curve does not cover the retained ids");
  }
  if (r.reality_roc.n_positive + r.reality_roc.n_negative !=
      retained.size() * reality.obs.n_models()) {
    return absl::InternalError("reality curve does not cover the retained ids");
  }
  r.scores_before = baseline.scores;
  r.scores_after = Restrict(reality.scores, retained);
  for (double f : fpr_grid) {
    r.gap_factors.push_back(
        ComputeGapFactor(r.baseline_roc, r.idealized_roc, r.reality_roc, f));
  }
  r.accuracy_before = baseline.obs.MeanAccuracy();
  r.accuracy_after = reality.obs.MeanAccuracy();
  r.baseline_source = baseline.source;
  r.reality_source = reality.source;
  return r;
}

absl::StatusOr<OnionResult> RunOnion(const Dataset& ds, const OnionConfig& config,
                                     const Audit* baseline) {
  if (auto s = config.Validate(); !s.ok()) return s;
  if (config.k >= ds.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat("k: ", config.k, " must be smaller than the dataset (", ds.size(), ")"));
  }
  Audit own_baseline;
  if (baseline == nullptr) {
    auto audit = AuditDataset(ds, config, "baseline");
    if (!audit.ok()) return audit.status();
    own_baseline = *std::move(audit);
    baseline = &own_baseline;
  }
  auto removed = SelectRemoval(baseline->scores, config.k, config.mode,
                               DeriveSeed(config.master_seed, "select"));
  if (!removed.ok()) return removed.status();
  auto reduced = RemoveExamples(ds, *removed);
  if (!reduced.ok()) return reduced.status();
  auto reality = AuditDataset(*reduced, config, "reality");
  if (!reality.ok()) return reality.status();
  return AssembleOnionResult(*baseline, *reality, *removed,
                             Difference(ds.id_set(), *removed), config.fpr_grid);
}

absl::StatusOr<OnionResult> RunOnionOod(const Dataset& ds, const OnionConfig& config,
                                        size_t ood_count, double shift,
                                        const Audit* baseline) {
  if (auto s = config.Validate(); !s.ok()) return s;
  if (config.k >= ds.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat("k: ", config.k, " must be smaller than the dataset (", ds.size(), ")"));
  }
  Audit own_baseline;
  if (baseline == nullptr) {
    auto audit = AuditDataset(ds, config, "baseline");
    if (!audit.ok()) return audit.status();
    own_baseline = *std::move(audit);
    baseline = &own_baseline;
  }
  auto removed = SelectRemoval(baseline->scores, config.k, RemovalMode::kTop);
  if (!removed.ok()) return removed.status();
  auto reduced = RemoveExamples(ds, *removed);
  if (!reduced.ok()) return reduced.status();
  auto augmented = InjectOod(*reduced, ood_count, shift,
                             DeriveSeed(config.master_seed, "ood"));
  if (!augmented.ok()) return augmented.status();
  auto reality = AuditDataset(*augmented, config, "reality");
  if (!reality.ok()) return reality.status();
  return AssembleOnionResult(*baseline, *reality, *removed,
                             Difference(ds.id_set(), *removed), config.fpr_grid);
}

absl::StatusOr<DedupOnionResult> RunOnionDedup(const Dataset& ds,
                                               const OnionConfig& config,
                                               double threshold) {
  if (auto s = config.Validate(); !s.ok()) return s;
  auto predup = AuditDataset(ds, config, "baseline");
  if (!predup.ok()) return predup.status();
  auto dedup = Deduplicate(ds, threshold);
  if (!dedup.ok()) return dedup.status();
  auto& [clean, report] = *dedup;

  DedupOnionResult out;
  out.report = report;
  out.scores_predup = predup->scores;
  absl::StatusOr<OnionResult> onion;
  if (report.removed_ids.empty()) {
    onion = RunOnion(clean, config, &*predup);
  } else {
    onion = RunOnion(clean, config);
  }
  if (!onion.ok()) return onion.status();
  out.onion = *std::move(onion);

  // Originals whose tagged duplicate was removed; the original itself is
  // never removed because duplicates carry higher ids.
  IdSet masked;
  for (ExampleId id : report.removed_ids) {
    const Example& e = ds[*ds.IndexOf(id)];
    if (e.tag.kind == Provenance::kDuplicate && e.tag.of_id &&
        clean.Contains(*e.tag.of_id)) {
      masked.insert(*e.tag.of_id);
    }
  }
  double total = 0.0;
  for (ExampleId id : masked) {
    const ExampleScore* before = out.scores_predup.Find(id);
    const ExampleScore* after = out.onion.scores_before.Find(id);
    if (before == nullptr || after == nullptr) {
      return absl::InternalError(absl::StrCat("no score for original ", id));
    }
    out.deltas.push_back({id, before->asr, after->asr});
    total += after->asr - before->asr;
  }
  if (!out.deltas.empty()) out.mean_delta = total / static_cast<double>(out.deltas.size());
  return out;
}

absl::StatusOr<IterativeResult> RunIterative(const Dataset& ds,
                                             const OnionConfig& config,
                                             size_t step_k, size_t n_steps,
                                             const Audit* baseline) {
  if (auto s = config.Validate(); !s.ok()) return s;
  if (n_steps == 0) return absl::InvalidArgumentError("n_steps: must be positive");
  if (step_k * n_steps >= ds.size()) {
    return absl::InvalidArgumentError(absl::StrCat(
        "step_k * n_steps (", step_k * n_steps, ") must be smaller than the dataset (",
        ds.size(), ")"));
  }
  Audit own_baseline;
  if (baseline == nullptr) {
    auto audit = AuditDataset(ds, config, "baseline");
    if (!audit.ok()) return audit.status();
    own_baseline = *std::move(audit);
    baseline = &own_baseline;
  }
  IterativeResult out;
  auto oneshot = SelectRemoval(baseline->scores, step_k * n_steps, RemovalMode::kTop);
  if (!oneshot.ok()) return oneshot.status();
  out.oneshot_removed = *std::move(oneshot);

  Dataset current = ds;
  IdSet removed;
  Audit latest;
  const Audit* selector = baseline;
  for (size_t step = 0; step < n_steps; ++step) {
    auto layer = SelectRemoval(selector->scores, step_k, RemovalMode::kTop);
    if (!layer.ok()) return layer.status();
    auto next = RemoveExamples(current, *layer);
    if (!next.ok()) return next.status();
    current = *std::move(next);
    removed.insert(layer->begin(), layer->end());
    out.step_removed.push_back(*std::move(layer));
    auto audit = AuditDataset(current, config, "reality", step);
    if (!audit.ok()) return audit.status();
    latest = *std::move(audit);
    selector = &latest;
  }
  auto result = AssembleOnionResult(*baseline, latest, removed,
                                    Difference(ds.id_set(), removed), config.fpr_grid);
  if (!result.ok()) return result.status();
  out.final_result = *std::move(result);
  size_t shared = 0;
  for (ExampleId id : removed) shared += out.oneshot_removed.contains(id);
  out.overlap_with_oneshot =
      step_k == 0 ? 1.0
                  : static_cast<double>(shared) / static_cast<double>(step_k * n_steps);
  return out;
}

absl::StatusOr<StabilityResult> CompareScores(const PrivacyScores& a,
                                              const PrivacyScores& b, size_t k) {
  if (a.size() != b.size()) {
    return absl::InvalidArgumentError("score sets cover different examples");
  }
  if (k > a.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat("k: ", k, " exceeds the number of scored examples (", a.size(), ")"));
  }
  const size_t n = a.size();
  double mean_a = 0.0, mean_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (a.entries()[i].id != b.entries()[i].id) {
      return absl::InvalidArgumentError("score sets cover different examples");
    }
    mean_a += a.entries()[i].asr;
    mean_b += b.entries()[i].asr;
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a.entries()[i].asr - mean_a;
    const double db = b.entries()[i].asr - mean_b;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  StabilityResult r;
  r.k = k;
  r.pearson_r = (saa == 0.0 || sbb == 0.0) ? 0.0 : sab / std::sqrt(saa * sbb);
  r.pearson_r = std::clamp(r.pearson_r, -1.0, 1.0);
  auto top_a = SelectRemoval(a, k, RemovalMode::kTop);
  auto top_b = SelectRemoval(b, k, RemovalMode::kTop);
  if (!top_a.ok()) return top_a.status();
  if (!top_b.ok()) return top_b.status();
  for (ExampleId id : *top_a) r.topk_overlap += top_b->contains(id);
  return r;
}

absl::StatusOr<StabilityResult> StabilityCheck(const Dataset& ds,
                                               const OnionConfig& config,
                                               size_t n_models_per_half, size_t k) {
  if (n_models_per_half < 64) {
    return absl::InvalidArgumentError("n_models_per_half: must be at least 64");
  }
  OnionConfig half = config;
  half.n_models = n_models_per_half;
  auto a = AuditDataset(ds, half, "stability", 0);
  if (!a.ok()) return a.status();
  auto b = AuditDataset(ds, half, "stability", 1);
  if (!b.ok()) return b.status();
  return CompareScores(a->scores, b->scores, k);
}

bool ToleranceBand::Contains(double a, double b) const {
  return std::abs(a - b) <= width;
}

absl::StatusOr<ToleranceBand> EstimateBand(const DatasetSource& source,
                                           const OnionConfig& config,
                                           size_t replicates, double fpr) {
  if (replicates < 2) return absl::InvalidArgumentError("replicates: need at least 2");
  ToleranceBand band;
  band.fpr = fpr;
  for (size_t i = 0; i < replicates; ++i) {
    auto ds = source(DeriveSeed(config.master_seed, "replicate", i));
    if (!ds.ok()) return ds.status();
    auto audit = AuditDataset(*ds, config, "replicate", i);
    if (!audit.ok()) return audit.status();
    auto roc = ComputeRoc(audit->obs, audit->loo);
    if (!roc.ok()) return roc.status();
    band.replicate_tprs.push_back(TprAtFpr(*roc, fpr));
  }
  const auto [lo, hi] =
      std::minmax_element(band.replicate_tprs.begin(), band.replicate_tprs.end());
  band.width = 2.0 * (*hi - *lo);
  return band;
}

absl::StatusOr<ToleranceBand> EstimateBand(const Dataset& ds,
                                           const OnionConfig& config,
                                           size_t replicates, double fpr) {
  return EstimateBand([&ds](uint64_t) -> absl::StatusOr<Dataset> { return ds; }, config,
                      replicates, fpr);
}

std::string OnionSummaryJson(const OnionResult& result, const OnionConfig& config,
                             const ToleranceBand* band) {
  json j;
  j["mode"] = RemovalModeName(config.mode);
  j["k"] = config.k;
  j["n_models"] = config.n_models;
  j["master_seed"] = config.master_seed;
  j["n_removed"] = result.removed_ids.size();
  j["n_retained"] = result.retained_ids.size();
  json gaps = json::array();
  for (const GapFactor& g : result.gap_factors) {
    gaps.push_back({{"fpr", g.fpr},
                    {"baseline_tpr", g.baseline_tpr},
                    {"idealized_tpr", g.idealized_tpr},
                    {"reality_tpr", g.reality_tpr},
                    {"ideal_gain", JsonNumber(g.ideal_gain)},
                    {"real_gain", JsonNumber(g.real_gain)},
                    {"shortfall", JsonNumber(g.shortfall)}});
  }
  j["gap_factors"] = gaps;
  j["auc"] = {{"baseline", result.baseline_roc.auc},
              {"idealized", result.idealized_roc.auc},
              {"reality", result.reality_roc.auc}};
  j["accuracy_before"] = result.accuracy_before;
  j["accuracy_after"] = result.accuracy_after;
  if (band != nullptr) {
    j["tolerance_band"] = {
        {"fpr", band->fpr},
        {"replicate_tprs", band->replicate_tprs},
        {"width", band->width},
        {"note", "seed-spread band; stand-in for an unspecified significance test"}};
  }
  return j.dump(2) + "\n";
}

}  // namespace onion_audit
