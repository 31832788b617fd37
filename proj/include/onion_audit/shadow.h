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

// Shadow-model ensembles over random subsets and the model x example grid of
// logit gaps that every attack consumes.

#ifndef ONION_AUDIT_SHADOW_H_
#define ONION_AUDIT_SHADOW_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"
#include "onion_audit/dataset.h"
#include "onion_audit/trainer.h"

namespace onion_audit {

// Minimum number of in-models and out-models per example.
inline constexpr size_t kMinPerSide = 2;

class MembershipMatrix {
 public:
  MembershipMatrix() = default;
  MembershipMatrix(std::vector<ExampleId> example_ids, size_t n_models,
                   double subset_prob, uint64_t master_seed,
                   std::vector<uint8_t> include);

  size_t n_models() const { return n_models_; }
  size_t n_examples() const { return example_ids_.size(); }
  const std::vector<ExampleId>& example_ids() const { return example_ids_; }
  double subset_prob() const { return subset_prob_; }
  uint64_t master_seed() const { return master_seed_; }

  bool included(size_t model, size_t example) const {
    return include_[model * example_ids_.size() + example] != 0;
  }
  std::span<const uint8_t> row(size_t model) const {
    return {include_.data() + model * example_ids_.size(), example_ids_.size()};
  }
  const std::vector<uint8_t>& cells() const { return include_; }
  IdSet Members(size_t model) const;
  std::optional<size_t> ColumnOf(ExampleId id) const;

  friend bool operator==(const MembershipMatrix& a, const MembershipMatrix& b) {
    return a.example_ids_ == b.example_ids_ && a.n_models_ == b.n_models_ &&
           a.subset_prob_ == b.subset_prob_ &&
           a.master_seed_ == b.master_seed_ && a.include_ == b.include_;
  }

 private:
  std::vector<ExampleId> example_ids_;
  size_t n_models_ = 0;
  double subset_prob_ = 0.5;
  uint64_t master_seed_ = 0;
  std::vector<uint8_t> include_;  // row-major n_models x n_examples, 0/1
  absl::flat_hash_map<ExampleId, size_t> column_;
};

// Each cell is Bernoulli(subset_prob) from a hash of (master_seed, model, id),
// so an example's inclusion pattern depends only on its id and survives
// removal of other examples. Columns below kMinPerSide on either side are
// repaired by flipping the lowest-index rows.
absl::StatusOr<MembershipMatrix> SampleMembership(
    const std::vector<ExampleId>& example_ids, size_t n_models,
    double subset_prob, uint64_t master_seed);

struct ObservationMatrix {
  MembershipMatrix membership;
  TrainConfig train_config;
  std::vector<double> gaps;  // row-major n_models x n_examples
  // Accuracy of each model on the examples it did not train on.
  std::vector<double> model_accuracies;

  size_t n_models() const { return membership.n_models(); }
  size_t n_examples() const { return membership.n_examples(); }
  double gap(size_t model, size_t example) const {
    return gaps[model * n_examples() + example];
  }
  double MeanAccuracy() const;

  friend bool operator==(const ObservationMatrix&,
                         const ObservationMatrix&) = default;
};

// Outcome of training and evaluating one ensemble row.
struct RowResult {
  size_t row = 0;
  std::vector<double> gaps;
  double accuracy = 0.0;
  bool retried = false;
};

struct EnsembleOptions {
  int workers = 1;
  // Optional evaluation order for rows; results do not depend on it.
  std::vector<size_t> row_order;
  // Rows already computed by an earlier run; they are not retrained.
  absl::flat_hash_map<size_t, RowResult> completed;
  // Called once per newly finished row, serialized across workers.
  std::function<absl::Status(const RowResult&)> on_row;
};

// Per-row training seed derived from the config seed.
uint64_t RowTrainSeed(const TrainConfig& config, size_t row);

// Trains one model per membership row and records its logit gap on every
// example. A row whose training diverges is retried once with half the
// learning rate; a second failure aborts with the row index.
absl::StatusOr<ObservationMatrix> RunEnsemble(const Dataset& ds,
                                              const MembershipMatrix& mm,
                                              const TrainConfig& config,
                                              const EnsembleOptions& options = {});

// Gap row of an externally supplied model.
absl::StatusOr<std::vector<double>> ObserveTarget(const Model& model,
                                                  const Dataset& ds);

// On-disk observation store:
//   manifest.json  shape, seeds, config, hashes, completion state
//   gaps.bin       float64 little-endian, row-major
//   include.bin    membership bits, row-major, LSB-first within each byte
//   rows.jsonl     one line per completed row (resume journal)
class ObservationStore {
 public:
  // Creates (or, with resume, reopens) a store for this ensemble. Reopening
  // checks that shape, seeds, config and dataset hash match.
  static absl::StatusOr<ObservationStore> Open(const std::string& dir,
                                               const Dataset& ds,
                                               const MembershipMatrix& mm,
                                               const TrainConfig& config,
                                               bool resume);

  // Rows already journaled (empty unless resumed).
  const absl::flat_hash_map<size_t, RowResult>& completed() const {
    return completed_;
  }
  absl::Status AppendRow(const RowResult& row);
  // Marks the store complete; readers only accept complete stores.
  absl::Status Finalize(const ObservationMatrix& obs);

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  size_t n_examples_ = 0;
  absl::flat_hash_map<size_t, RowResult> completed_;
};

absl::StatusOr<ObservationMatrix> LoadObservationStore(const std::string& dir);

// Convenience: run an ensemble journaled into `dir`, resuming if requested.
absl::StatusOr<ObservationMatrix> RunEnsembleToStore(
    const Dataset& ds, const MembershipMatrix& mm, const TrainConfig& config,
    const std::string& dir, bool resume, EnsembleOptions options = {});

// Packs 0/1 cells LSB-first.
std::string PackBits(std::span<const uint8_t> cells);
std::vector<uint8_t> UnpackBits(absl::string_view bytes, size_t count);

}  // namespace onion_audit

#endif  // ONION_AUDIT_SHADOW_H_
