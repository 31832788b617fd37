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

#include <algorithm>
#include <cmath>
#include <limits>

#include "absl/strings/str_cat.h"
#include "onion_audit/io.h"

namespace onion_audit {
namespace {

// Sufficient statistics of one side of a column.
struct SideStats {
  size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;  // sum of squared deviations from mean
};

double ClampedSigma(double m2, size_t n) {
  const double var = std::max(m2, 0.0) / static_cast<double>(n - 1);
  return std::max(std::sqrt(var), kSigmaFloor);
}

absl::Status InsufficientData(ExampleId id, size_t n_in, size_t n_out) {
  return absl::FailedPreconditionError(absl::StrCat(
      "insufficient observations for example ", id, ": ", n_in, " in / ",
      n_out, " out after leave-one-out (need ", kMinPerSide, " each)"));
}

}  // namespace

absl::StatusOr<GaussPair> FitGaussians(const ObservationMatrix& obs,
                                       size_t example_index,
                                       std::optional<size_t> exclude_model) {
  const size_t n_models = obs.n_models();
  if (example_index >= obs.n_examples()) {
    return absl::OutOfRangeError(
        absl::StrCat("example index ", example_index, " out of range"));
  }
  double sum_in = 0.0, sum_out = 0.0;
  size_t n_in = 0, n_out = 0;
  for (size_t m = 0; m < n_models; ++m) {
    if (exclude_model && *exclude_model == m) continue;
    const double g = obs.gap(m, example_index);
    if (obs.membership.included(m, example_index)) {
      sum_in += g;
      ++n_in;
    } else {
      sum_out += g;
      ++n_out;
    }
  }
  if (n_in < kMinPerSide || n_out < kMinPerSide) {
    return InsufficientData(obs.membership.example_ids()[example_index], n_in, n_out);
  }
  GaussPair gp;
  gp.n_in = n_in;
  gp.n_out = n_out;
  gp.mu_in = sum_in / static_cast<double>(n_in);
  gp.mu_out = sum_out / static_cast<double>(n_out);
  double ss_in = 0.0, ss_out = 0.0;
  for (size_t m = 0; m < n_models; ++m) {
    if (exclude_model && *exclude_model == m) continue;
    const double g = obs.gap(m, example_index);
    if (obs.membership.included(m, example_index)) {
      ss_in += (g - gp.mu_in) * (g - gp.mu_in);
    } else {
      ss_out += (g - gp.mu_out) * (g - gp.mu_out);
    }
  }
  gp.sigma_in = ClampedSigma(ss_in, n_in);
  gp.sigma_out = ClampedSigma(ss_out, n_out);
  return gp;
}

double LlrScore(double gap, const GaussPair& gp) {
  const double z_in = (gap - gp.mu_in) / gp.sigma_in;
  const double z_out = (gap - gp.mu_out) / gp.sigma_out;
  return std::log(gp.sigma_out / gp.sigma_in) - 0.5 * z_in * z_in +
         0.5 * z_out * z_out;
}

PrivacyScores::PrivacyScores(std::vector<ExampleScore> scores)
    : scores_(std::move(scores)) {
  std::sort(scores_.begin(), scores_.end(),
            [](const ExampleScore& a, const ExampleScore& b) { return a.id < b.id; });
}

const ExampleScore* PrivacyScores::Find(ExampleId id) const {
  auto it = std::lower_bound(
      scores_.begin(), scores_.end(), id,
      [](const ExampleScore& s, ExampleId value) { return s.id < value; });
  if (it == scores_.end() || it->id != id) return nullptr;
  return &*it;
}

IdSet PrivacyScores::ids() const {
  IdSet out;
  for (const ExampleScore& s : scores_) out.insert(out.end(), s.id);
  return out;
}

absl::StatusOr<std::vector<double>> ComputeLooColumn(const ObservationMatrix& obs,
                                                     size_t e) {
  const size_t n_models = obs.n_models();
  if (e >= obs.n_examples()) {
    return absl::OutOfRangeError(absl::StrCat("example index ", e, " out of range"));
  }
  SideStats side[2];  // [0] out, [1] in
  for (size_t m = 0; m < n_models; ++m) {
    SideStats& s = side[obs.membership.included(m, e) ? 1 : 0];
    s.mean += obs.gap(m, e);
    ++s.n;
  }
  if (side[1].n <= kMinPerSide || side[0].n <= kMinPerSide) {
    const bool in_short = side[1].n <= kMinPerSide;
    return InsufficientData(obs.membership.example_ids()[e],
                            in_short && side[1].n > 0 ? side[1].n - 1 : side[1].n,
                            in_short || side[0].n == 0 ? side[0].n : side[0].n - 1);
  }
  for (SideStats& s : side) s.mean /= static_cast<double>(s.n);
  for (size_t m = 0; m < n_models; ++m) {
    SideStats& s = side[obs.membership.included(m, e) ? 1 : 0];
    const double dev = obs.gap(m, e) - s.mean;
    s.m2 += dev * dev;
  }
  const double full_sigma[2] = {ClampedSigma(side[0].m2, side[0].n),
                                ClampedSigma(side[1].m2, side[1].n)};

  std::vector<double> out(n_models);
  for (size_t m = 0; m < n_models; ++m) {
    const double x = obs.gap(m, e);
    const int own = obs.membership.included(m, e) ? 1 : 0;
    // Remove row m from its own side (Welford downdate).
    const SideStats& s = side[own];
    const double n1 = static_cast<double>(s.n - 1);
    const double mean = (static_cast<double>(s.n) * s.mean - x) / n1;
    const double m2 = s.m2 - (x - s.mean) * (x - mean);
    GaussPair gp;
    gp.n_in = own ? s.n - 1 : side[1].n;
    gp.n_out = own ? side[0].n : s.n - 1;
    if (own) {
      gp.mu_in = mean;
      gp.sigma_in = ClampedSigma(m2, s.n - 1);
      gp.mu_out = side[0].mean;
      gp.sigma_out = full_sigma[0];
    } else {
      gp.mu_out = mean;
      gp.sigma_out = ClampedSigma(m2, s.n - 1);
      gp.mu_in = side[1].mean;
      gp.sigma_in = full_sigma[1];
    }
    double score = LlrScore(x, gp);
    // The downdate differs from a fresh two-pass fit by rounding only. When
    // the decision is that close to the boundary, refit exactly so the
    // prediction matches the direct leave-one-out definition.
    const double z_in = (x - gp.mu_in) / gp.sigma_in;
    const double z_out = (x - gp.mu_out) / gp.sigma_out;
    const double scale = std::abs(std::log(gp.sigma_out / gp.sigma_in)) +
                         0.5 * (z_in * z_in + z_out * z_out) + 1.0;
    if (std::abs(score) <= 1e-9 * scale) {
      auto exact = FitGaussians(obs, e, m);
      if (!exact.ok()) return exact.status();
      score = LlrScore(x, *exact);
    }
    out[m] = score;
  }
  return out;
}

absl::StatusOr<LooScores> ComputeLooScores(const ObservationMatrix& obs) {
  const size_t n_examples = obs.n_examples();
  LooScores out;
  out.n_models = obs.n_models();
  out.n_examples = n_examples;
  out.scores.resize(out.n_models * n_examples);
  for (size_t e = 0; e < n_examples; ++e) {
    auto column = ComputeLooColumn(obs, e);
    if (!column.ok()) return column.status();
    for (size_t m = 0; m < out.n_models; ++m) out.scores[m * n_examples + e] = (*column)[m];
  }
  return out;
}

absl::StatusOr<PrivacyScores> ComputeAsr(const ObservationMatrix& obs,
                                         const LooScores& loo) {
  if (loo.n_models != obs.n_models() || loo.n_examples != obs.n_examples()) {
    return absl::InvalidArgumentError("leave-one-out scores do not match observations");
  }
  std::vector<ExampleScore> out;
  out.reserve(obs.n_examples());
  for (size_t e = 0; e < obs.n_examples(); ++e) {
    size_t correct = 0;
    for (size_t m = 0; m < obs.n_models(); ++m) {
      correct += PredictMembership(loo.at(m, e)) == obs.membership.included(m, e);
    }
    ExampleScore s;
    s.id = obs.membership.example_ids()[e];
    s.n_evaluations = obs.n_models();
    s.asr = static_cast<double>(correct) / static_cast<double>(obs.n_models());
    s.advantage = 2.0 * s.asr - 1.0;
    auto fit = FitGaussians(obs, e);
    if (!fit.ok()) return fit.status();
    s.fit = *fit;
    out.push_back(s);
  }
  return PrivacyScores(std::move(out));
}

absl::StatusOr<PrivacyScores> ComputeAsr(const ObservationMatrix& obs) {
  auto loo = ComputeLooScores(obs);
  if (!loo.ok()) return loo.status();
  return ComputeAsr(obs, *loo);
}

absl::StatusOr<RocCurve> RocFromPairs(std::vector<ScoredPair> pairs) {
  RocCurve roc;
  for (const ScoredPair& p : pairs) (p.member ? roc.n_positive : roc.n_negative)++;
  if (roc.n_positive == 0 || roc.n_negative == 0) {
    return absl::InvalidArgumentError(
        "ROC needs at least one member and one non-member decision");
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.score > b.score; });
  const double pos = static_cast<double>(roc.n_positive);
  const double neg = static_cast<double>(roc.n_negative);
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < pairs.size();) {
    const double threshold = pairs[i].score;
    for (; i < pairs.size() && pairs[i].score == threshold; ++i) {
      (pairs[i].member ? tp : fp)++;
    }
    roc.points.push_back({threshold, static_cast<double>(fp) / neg,
                          static_cast<double>(tp) / pos});
  }
  for (size_t i = 1; i < roc.points.size(); ++i) {
    const RocPoint& a = roc.points[i - 1];
    const RocPoint& b = roc.points[i];
    roc.auc += 0.5 * (b.fpr - a.fpr) * (a.tpr + b.tpr);
  }
  return roc;
}

absl::StatusOr<RocCurve> ComputeRoc(const ObservationMatrix& obs,
                                    const LooScores& loo,
                                    const std::optional<IdSet>& include_ids) {
  std::vector<size_t> columns;
  if (include_ids) {
    if (include_ids->empty()) {
      return absl::InvalidArgumentError("include_ids: empty restriction set");
    }
    for (ExampleId id : *include_ids) {
      auto col = obs.membership.ColumnOf(id);
      if (!col) {
        return absl::NotFoundError(
            absl::StrCat("include_ids: example ", id, " is not in the observations"));
      }
      columns.push_back(*col);
    }
    std::sort(columns.begin(), columns.end());
  } else {
    columns.resize(obs.n_examples());
    for (size_t e = 0; e < columns.size(); ++e) columns[e] = e;
  }
  std::vector<ScoredPair> pairs;
  pairs.reserve(columns.size() * obs.n_models());
  for (size_t m = 0; m < obs.n_models(); ++m) {
    for (size_t e : columns) {
      pairs.push_back({loo.at(m, e), obs.membership.included(m, e)});
    }
  }
  return RocFromPairs(std::move(pairs));
}

absl::StatusOr<RocCurve> ComputeRoc(const ObservationMatrix& obs,
                                    const std::optional<IdSet>& include_ids) {
  auto loo = ComputeLooScores(obs);
  if (!loo.ok()) return loo.status();
  return ComputeRoc(obs, *loo, include_ids);
}

double TprAtFpr(const RocCurve& roc, double target_fpr) {
  double best = 0.0;
  for (const RocPoint& p : roc.points) {
    if (p.fpr > target_fpr) break;
    best = std::max(best, p.tpr);
  }
  return best;
}

absl::StatusOr<Audit> AuditObservations(ObservationMatrix obs) {
  Audit audit;
  auto loo = ComputeLooScores(obs);
  if (!loo.ok()) return loo.status();
  audit.loo = *std::move(loo);
  auto scores = ComputeAsr(obs, audit.loo);
  if (!scores.ok()) return scores.status();
  audit.scores = *std::move(scores);
  audit.obs = std::move(obs);
  return audit;
}

std::string ScoresCsv(const PrivacyScores& scores) {
  std::string out =
      "example_id,asr,advantage,n_in,n_out,mu_in,sigma_in,mu_out,sigma_out\n";
  for (const ExampleScore& s : scores.entries()) {
    absl::StrAppend(&out, s.id, ",", FormatDouble(s.asr), ",",
                    FormatDouble(s.advantage), ",", s.fit.n_in, ",", s.fit.n_out,
                    ",", FormatDouble(s.fit.mu_in), ",",
                    FormatDouble(s.fit.sigma_in), ",", FormatDouble(s.fit.mu_out),
                    ",", FormatDouble(s.fit.sigma_out), "\n");
  }
  return out;
}

std::string RocCsv(const RocCurve& roc) {
  std::string out = "threshold,fpr,tpr\n";
  for (const RocPoint& p : roc.points) {
    absl::StrAppend(&out, FormatDouble(p.threshold), ",", FormatDouble(p.fpr), ",",
                    FormatDouble(p.tpr), "\n");
  }
  return out;
}

}  // namespace onion_audit
