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

// Synthetic labeled datasets with stable example identities.
//
// A Dataset is an immutable value: every mutation (duplicate injection,
// out-of-distribution injection, deduplication, removal) returns a new
// Dataset and leaves the ids and payloads of surviving examples untouched,
// so scores computed on different variants can be joined by id.

#ifndef ONION_AUDIT_DATASET_H_
#define ONION_AUDIT_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"

namespace onion_audit {

using ExampleId = uint64_t;
using IdSet = std::set<ExampleId>;

enum class Provenance { kOriginal, kDuplicate, kOod };

struct Tag {
  Provenance kind = Provenance::kOriginal;
  // Set iff kind == kDuplicate.
  std::optional<ExampleId> of_id;

  friend bool operator==(const Tag&, const Tag&) = default;
};

struct Example {
  ExampleId id = 0;
  std::vector<double> features;
  int label = 0;
  Tag tag;

  friend bool operator==(const Example&, const Example&) = default;
};

// One step in the history that produced a dataset.
struct LineageRecord {
  std::string operation;
  uint64_t seed = 0;
  std::string params;

  friend bool operator==(const LineageRecord&, const LineageRecord&) = default;
};

class Dataset {
 public:
  // Validates ids (unique, ascending), feature dimensions and labels.
  static absl::StatusOr<Dataset> Create(int dim, int num_classes,
                                        std::vector<Example> examples,
                                        std::vector<LineageRecord> lineage);

  int dim() const { return dim_; }
  int num_classes() const { return num_classes_; }
  size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const std::vector<Example>& examples() const { return examples_; }
  const Example& operator[](size_t index) const { return examples_[index]; }
  const std::vector<LineageRecord>& lineage() const { return lineage_; }

  std::vector<ExampleId> ids() const;
  IdSet id_set() const;
  std::optional<size_t> IndexOf(ExampleId id) const;
  bool Contains(ExampleId id) const { return IndexOf(id).has_value(); }
  ExampleId max_id() const { return examples_.empty() ? 0 : examples_.back().id; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.dim_ == b.dim_ && a.num_classes_ == b.num_classes_ &&
           a.examples_ == b.examples_ && a.lineage_ == b.lineage_;
  }

 private:
  Dataset(int dim, int num_classes, std::vector<Example> examples,
          std::vector<LineageRecord> lineage);

  int dim_;
  int num_classes_;
  std::vector<Example> examples_;
  std::vector<LineageRecord> lineage_;
  absl::flat_hash_map<ExampleId, size_t> index_;
};

struct MixtureParams {
  size_t n = 2000;
  int dim = 16;
  int num_classes = 4;
  double class_sep = 6.0;
  double outlier_frac = 0.05;
  uint64_t seed = 1;
  // Outliers are drawn with this multiple of the per-class standard deviation.
  double outlier_scale = 3.0;
};

// Class centers used by GenerateGaussianMixture. Pairwise distances are at
// least params.class_sep.
std::vector<std::vector<double>> MixtureClassMeans(const MixtureParams& params);

// Isotropic unit-variance Gaussian per class, balanced class sizes, with
// round(outlier_frac * class_size) members of each class drawn at
// outlier_scale times the standard deviation. Ids are 0..n-1.
absl::StatusOr<Dataset> GenerateGaussianMixture(const MixtureParams& params);

// Appends `count` exact copies of distinct originals chosen uniformly at
// random. Copies get fresh ids above max_id() and a duplicate tag.
absl::StatusOr<Dataset> InjectDuplicates(const Dataset& ds, size_t count,
                                         uint64_t seed);

// Appends `count` unit-variance points around a center placed `shift` away
// from the global feature mean in a random direction, with uniformly random
// labels.
absl::StatusOr<Dataset> InjectOod(const Dataset& ds, size_t count,
                                  double shift, uint64_t seed);

struct DedupReport {
  // Connected components of size >= 2, each ascending, ordered by minimum id.
  std::vector<std::vector<ExampleId>> clusters;
  IdSet removed_ids;
  double threshold = 0.85;
};

// Links every pair with cosine similarity >= threshold and keeps the minimum
// id of each connected component.
absl::StatusOr<std::pair<Dataset, DedupReport>> Deduplicate(const Dataset& ds,
                                                            double threshold);

absl::StatusOr<Dataset> RemoveExamples(const Dataset& ds, const IdSet& ids);

double CosineSimilarity(std::span<const double> a, std::span<const double> b);

// Canonical JSON-lines form: a header line with dim, num_classes and
// seed_lineage, then one example per line in ascending id order.
std::string SerializeDataset(const Dataset& ds);
absl::StatusOr<Dataset> ParseDataset(absl::string_view text);

absl::StatusOr<Dataset> ReadDatasetFile(const std::string& path);
absl::Status WriteDatasetFile(const Dataset& ds, const std::string& path);

std::string ProvenanceName(Provenance p);

}  // namespace onion_audit

#endif  // ONION_AUDIT_DATASET_H_
