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

// Deterministic from-scratch trainers: multinomial logistic regression, a
// one-hidden-layer ReLU network and a linear SVM.
//
// Training is single-threaded and a pure function of (dataset, members,
// config): the same inputs give bit-identical parameters no matter how many
// models are trained concurrently.

#ifndef ONION_AUDIT_TRAINER_H_
#define ONION_AUDIT_TRAINER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"
#include "onion_audit/dataset.h"

namespace onion_audit {

enum class Arch { kLogReg, kMlp, kLinearSvm };

std::string ArchName(Arch arch);
absl::StatusOr<Arch> ParseArch(absl::string_view name);

struct TrainConfig {
  Arch arch = Arch::kLogReg;
  int hidden_width = 32;  // kMlp only
  double svm_c = 10.0;    // kLinearSvm only
  int epochs = 40;
  double lr = 0.5;
  int batch_size = 32;
  double weight_decay = 0.0;
  uint64_t seed = 0;

  absl::Status Validate() const;
  // Stable textual form; also the input of ConfigHash.
  std::string Canonical() const;
  uint64_t ConfigHash() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Parameters live in one flat vector in declaration order:
//   logreg:     W[k x d], b[k]
//   mlp:        W1[h x d], b1[h], W2[k x h], b2[k]
//   linear_svm: w[d], b[1]
struct Model {
  Arch arch = Arch::kLogReg;
  int dim = 0;
  int num_classes = 0;
  int hidden_width = 0;
  uint64_t config_hash = 0;
  uint64_t fingerprint = 0;  // hash of the sorted member ids
  std::vector<double> params;

  static size_t ParamCount(Arch arch, int dim, int num_classes, int hidden);
  // All-zero parameters of the right shape.
  static Model Zeros(Arch arch, int dim, int num_classes, int hidden = 0);

  friend bool operator==(const Model&, const Model&) = default;
};

struct TrainStats {
  // Mean training objective over each epoch's mini-batches, including the
  // regularizer.
  std::vector<double> epoch_losses;
};

uint64_t MembersFingerprint(std::span<const ExampleId> sorted_ids);

// Mini-batch gradient descent with a per-epoch shuffle drawn from
// config.seed and a linearly decaying step size. Cross-entropy for logreg and
// mlp; dispatches to TrainSvm for kLinearSvm.
//
// Errors: InvalidArgument for bad config or empty/unknown members; Aborted
// ("training diverged") when the loss becomes non-finite.
absl::StatusOr<Model> Train(const Dataset& ds, const IdSet& members,
                            const TrainConfig& config,
                            TrainStats* stats = nullptr);

// L2-regularized hinge loss, lambda = 1 / (C * |members|), labels {0,1}
// mapped to {-1,+1}. Binary datasets only.
absl::StatusOr<Model> TrainSvm(const Dataset& ds, const IdSet& members,
                               const TrainConfig& config,
                               TrainStats* stats = nullptr);

absl::StatusOr<std::vector<double>> PredictLogits(
    const Model& model, std::span<const double> features);

// Same as PredictLogits without the shape check; `logits` must have
// num_classes entries.
void ForwardUnchecked(const Model& model, std::span<const double> features,
                      std::span<double> logits);

// Highest minus second-highest entry; 0 on a tie.
absl::StatusOr<double> LogitGap(std::span<const double> logits);

// Members whose signed margin y * (w.x + b) is <= 1 + margin_tol.
absl::StatusOr<IdSet> SupportVectors(const Model& model, const Dataset& ds,
                                     const IdSet& members, double margin_tol);

// Objective and its gradient with respect to Model::params, evaluated on the
// given dataset rows. Exposed for gradient checking. For logreg/mlp the
// objective is mean cross-entropy + (weight_decay / 2) * |weights|^2; for
// linear_svm it is (lambda / 2) * |w|^2 + mean hinge, with lambda =
// 1 / (svm_c * rows.size()).
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};
LossAndGradient EvaluateObjective(const Model& model, const Dataset& ds,
                                  std::span<const size_t> rows,
                                  const TrainConfig& config);

// Model files: "OAMD" magic, format version, arch, dims, config hash,
// fingerprint, then little-endian float64 parameters in declaration order.
std::string SerializeModel(const Model& model);
absl::StatusOr<Model> ParseModel(absl::string_view bytes);

}  // namespace onion_audit

#endif  // ONION_AUDIT_TRAINER_H_
