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

// Likelihood-ratio membership inference over an ObservationMatrix.
//
// Every shadow model doubles as a target: to attack model m on example e,
// the in/out Gaussians for e are fitted on all rows except m. The resulting
// leave-one-out score grid feeds per-example attack success rates (ASR),
// pooled ROC curves and influence estimates.

#ifndef ONION_AUDIT_LIRA_H_
#define ONION_AUDIT_LIRA_H_

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "onion_audit/dataset.h"
#include "onion_audit/shadow.h"

namespace onion_audit {

inline constexpr double kSigmaFloor = 1e-3;

struct GaussPair {
  double mu_in = 0.0;
  double sigma_in = kSigmaFloor;
  size_t n_in = 0;
  double mu_out = 0.0;
  double sigma_out = kSigmaFloor;
  size_t n_out = 0;

  friend bool operator==(const GaussPair&, const GaussPair&) = default;
};

// Sample mean and unbiased standard deviation of the in- and out-gaps of one
// column, skipping `exclude_model` if given. Standard deviations are clamped
// below at kSigmaFloor.
absl::StatusOr<GaussPair> FitGaussians(const ObservationMatrix& obs,
                                       size_t example_index,
                                       std::optional<size_t> exclude_model = {});

// log N(gap; mu_in, sigma_in) - log N(gap; mu_out, sigma_out).
double LlrScore(double gap, const GaussPair& gp);

// Member iff the score is strictly positive.
inline bool PredictMembership(double score) { return score > 0; }

struct ExampleScore {
  ExampleId id = 0;
  double asr = 0.0;
  double advantage = 0.0;  // 2 * asr - 1
  size_t n_evaluations = 0;
  // Gaussian fit on all rows (reporting only; predictions use leave-one-out).
  GaussPair fit;

  friend bool operator==(const ExampleScore&, const ExampleScore&) = default;
};

class PrivacyScores {
 public:
  PrivacyScores() = default;
  explicit PrivacyScores(std::vector<ExampleScore> scores);

  const std::vector<ExampleScore>& entries() const { return scores_; }
  size_t size() const { return scores_.size(); }
  const ExampleScore* Find(ExampleId id) const;
  IdSet ids() const;

  friend bool operator==(const PrivacyScores&, const PrivacyScores&) = default;

 private:
  std::vector<ExampleScore> scores_;  // ascending id
};

// Leave-one-out log-likelihood-ratio score for every (model, example) cell.
struct LooScores {
  size_t n_models = 0;
  size_t n_examples = 0;
  std::vector<double> scores;  // row-major

  double at(size_t model, size_t example) const {
    return scores[model * n_examples + example];
  }
};

// Fails with FailedPrecondition naming the first example that lacks two in-
// and two out-observations once a row is held out.
absl::StatusOr<LooScores> ComputeLooScores(const ObservationMatrix& obs);

// Leave-one-out scores of a single column, one per model.
absl::StatusOr<std::vector<double>> ComputeLooColumn(const ObservationMatrix& obs,
                                                     size_t example_index);

absl::StatusOr<PrivacyScores> ComputeAsr(const ObservationMatrix& obs);
absl::StatusOr<PrivacyScores> ComputeAsr(const ObservationMatrix& obs,
                                         const LooScores& loo);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  // Descending threshold; first point is (+inf, 0, 0), last is (1, 1).
  std::vector<RocPoint> points;
  double auc = 0.0;
  size_t n_positive = 0;
  size_t n_negative = 0;
};

// One labeled attack decision.
struct ScoredPair {
  double score = 0.0;
  bool member = false;
};

// Sweeps a single threshold over every distinct score; a pair is predicted
// a member when score >= threshold.
absl::StatusOr<RocCurve> RocFromPairs(std::vector<ScoredPair> pairs);

// Pools all (model, example) decisions, optionally restricted to the
// examples in `include_ids`.
absl::StatusOr<RocCurve> ComputeRoc(const ObservationMatrix& obs,
                                    const std::optional<IdSet>& include_ids = {});
absl::StatusOr<RocCurve> ComputeRoc(const ObservationMatrix& obs,
                                    const LooScores& loo,
                                    const std::optional<IdSet>& include_ids = {});

// Highest TPR among sweep points whose FPR does not exceed target_fpr.
double TprAtFpr(const RocCurve& roc, double target_fpr);

// A complete attack over one ensemble: observations, leave-one-out scores
// and per-example privacy scores.
struct Audit {
  ObservationMatrix obs;
  LooScores loo;
  PrivacyScores scores;
  // Observation store the matrix was journaled to, if any.
  std::string source;
};

absl::StatusOr<Audit> AuditObservations(ObservationMatrix obs);

// scores.csv: example_id,asr,advantage,n_in,n_out,mu_in,sigma_in,mu_out,sigma_out
std::string ScoresCsv(const PrivacyScores& scores);
// roc.csv: threshold,fpr,tpr in descending threshold order.
std::string RocCsv(const RocCurve& roc);

}  // namespace onion_audit

#endif  // ONION_AUDIT_LIRA_H_
