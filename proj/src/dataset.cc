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

#include "onion_audit/dataset.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_join.h"
#include "absl/strings/str_split.h"
#include "json.hpp"
#include "onion_audit/io.h"
#include "onion_audit/seeding.h"

namespace onion_audit {
namespace {

using json = nlohmann::json;

absl::Status ConfigError(absl::string_view field, absl::string_view message) {
  return absl::InvalidArgumentError(absl::StrCat(field, ": ", message));
}

std::vector<double> NormalVector(int dim, double scale, Rng& rng) {
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(dim));
  for (double& x : v) x = scale * normal(rng);
  return v;
}

// Path-compressing union-find over example indices.
class DisjointSets {
 public:
  explicit DisjointSets(size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), size_t{0});
  }
  size_t Find(size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void Union(size_t a, size_t b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return;
    // Lower index becomes the root so roots are component minima.
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<size_t> parent_;
};

}  // namespace

std::string ProvenanceName(Provenance p) {
  switch (p) {
    case Provenance::kOriginal:
      return "original";
    case Provenance::kDuplicate:
      return "duplicate";
    case Provenance::kOod:
      return "ood";
  }
  return "unknown";
}

Dataset::Dataset(int dim, int num_classes, std::vector<Example> examples,
                 std::vector<LineageRecord> lineage)
    : dim_(dim),
      num_classes_(num_classes),
      examples_(std::move(examples)),
      lineage_(std::move(lineage)) {
  index_.reserve(examples_.size());
  for (size_t i = 0; i < examples_.size(); ++i) index_[examples_[i].id] = i;
}

absl::StatusOr<Dataset> Dataset::Create(int dim, int num_classes,
                                        std::vector<Example> examples,
                                        std::vector<LineageRecord> lineage) {
  if (dim <= 0) return ConfigError("dim", "must be positive");
  if (num_classes <= 0) return ConfigError("num_classes", "must be positive");
  for (size_t i = 0; i < examples.size(); ++i) {
    const Example& e = examples[i];
    if (i > 0 && e.id <= examples[i - 1].id) {
      return absl::InvalidArgumentError(absl::StrCat(
          "example ids must be unique and ascending; saw ", e.id, " after ",
          examples[i - 1].id));
    }
    if (e.features.size() != static_cast<size_t>(dim)) {
      return absl::InvalidArgumentError(
          absl::StrCat("example ", e.id, " has ", e.features.size(),
                       " features, expected ", dim));
    }
    if (e.label < 0 || e.label >= num_classes) {
      return absl::InvalidArgumentError(absl::StrCat(
          "example ", e.id, " label ", e.label, " outside [0, ", num_classes,
          ")"));
    }
    if ((e.tag.kind == Provenance::kDuplicate) != e.tag.of_id.has_value()) {
      return absl::InvalidArgumentError(
          absl::StrCat("example ", e.id, " has an inconsistent duplicate tag"));
    }
  }
  return Dataset(dim, num_classes, std::move(examples), std::move(lineage));
}

std::vector<ExampleId> Dataset::ids() const {
  std::vector<ExampleId> out;
  out.reserve(examples_.size());
  for (const Example& e : examples_) out.push_back(e.id);
  return out;
}

IdSet Dataset::id_set() const {
  IdSet out;
  for (const Example& e : examples_) out.insert(out.end(), e.id);
  return out;
}

std::optional<size_t> Dataset::IndexOf(ExampleId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::vector<double>> MixtureClassMeans(const MixtureParams& params) {
  const auto k = static_cast<size_t>(params.num_classes);
  const auto d = static_cast<size_t>(params.dim);
  std::vector<std::vector<double>> means(k, std::vector<double>(d, 0.0));
  if (k <= d) {
    // Scaled basis vectors: every pair is exactly class_sep apart.
    for (size_t c = 0; c < k; ++c) means[c][c] = params.class_sep / std::sqrt(2.0);
    return means;
  }
  Rng rng(DeriveSeed(params.seed, "class_means"));
  for (auto& m : means) m = NormalVector(params.dim, 1.0, rng);
  double min_dist = std::numeric_limits<double>::infinity();
  for (size_t a = 0; a < k; ++a) {
    for (size_t b = a + 1; b < k; ++b) {
      double sq = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const double diff = means[a][j] - means[b][j];
        sq += diff * diff;
      }
      min_dist = std::min(min_dist, std::sqrt(sq));
    }
  }
  const double scale = params.class_sep / min_dist;
  for (auto& m : means) {
    for (double& x : m) x *= scale;
  }
  return means;
}

absl::StatusOr<Dataset> GenerateGaussianMixture(const MixtureParams& params) {
  if (params.num_classes < 2) return ConfigError("num_classes", "must be >= 2");
  if (params.n < static_cast<size_t>(params.num_classes)) {
    return ConfigError("n", "must be >= num_classes");
  }
  if (params.dim < 2) return ConfigError("dim", "must be >= 2");
  if (!(params.class_sep > 0)) return ConfigError("class_sep", "must be > 0");
  if (!(params.outlier_frac >= 0 && params.outlier_frac <= 1)) {
    return ConfigError("outlier_frac", "must lie in [0, 1]");
  }
  if (!(params.outlier_scale > 0)) {
    return ConfigError("outlier_scale", "must be > 0");
  }

  const auto k = static_cast<size_t>(params.num_classes);
  const auto means = MixtureClassMeans(params);
  Rng rng(params.seed);

  std::vector<std::vector<size_t>> members(k);
  for (size_t i = 0; i < params.n; ++i) members[i % k].push_back(i);
  std::vector<bool> is_outlier(params.n, false);
  for (auto& cls : members) {
    const auto n_out = static_cast<size_t>(
        std::llround(params.outlier_frac * static_cast<double>(cls.size())));
    Shuffle(cls, rng);
    for (size_t j = 0; j < n_out; ++j) is_outlier[cls[j]] = true;
  }

  std::vector<Example> examples;
  examples.reserve(params.n);
  for (size_t i = 0; i < params.n; ++i) {
    const size_t c = i % k;
    Example e;
    e.id = i;
    e.label = static_cast<int>(c);
    e.features = NormalVector(params.dim,
                              is_outlier[i] ? params.outlier_scale : 1.0, rng);
    for (size_t j = 0; j < e.features.size(); ++j) e.features[j] += means[c][j];
    examples.push_back(std::move(e));
  }
  LineageRecord record{
      "gen_gaussian_mixture", params.seed,
      absl::StrCat("n=", params.n, ",d=", params.dim, ",k=", params.num_classes,
                   ",sep=", FormatDouble(params.class_sep),
                   ",outlier_frac=", FormatDouble(params.outlier_frac),
                   ",outlier_scale=", FormatDouble(params.outlier_scale))};
  return Dataset::Create(params.dim, params.num_classes, std::move(examples),
                         {std::move(record)});
}

absl::StatusOr<Dataset> InjectDuplicates(const Dataset& ds, size_t count,
                                         uint64_t seed) {
  if (count == 0) return ds;
  std::vector<size_t> originals;
  for (size_t i = 0; i < ds.size(); ++i) {
    if (ds[i].tag.kind == Provenance::kOriginal) originals.push_back(i);
  }
  if (count > originals.size()) {
    return ConfigError("count", absl::StrCat("cannot duplicate ", count,
                                             " of ", originals.size(),
                                             " original examples"));
  }
  Rng rng(seed);
  const auto picks = SampleWithoutReplacement(originals.size(), count, rng);
  std::vector<Example> examples = ds.examples();
  ExampleId next_id = ds.max_id() + 1;
  for (size_t pick : picks) {
    const Example& source = ds[originals[pick]];
    Example copy = source;
    copy.id = next_id++;
    copy.tag = Tag{Provenance::kDuplicate, source.id};
    examples.push_back(std::move(copy));
  }
  auto lineage = ds.lineage();
  lineage.push_back({"inject_duplicates", seed, absl::StrCat("count=", count)});
  return Dataset::Create(ds.dim(), ds.num_classes(), std::move(examples),
                         std::move(lineage));
}

absl::StatusOr<Dataset> InjectOod(const Dataset& ds, size_t count,
                                  double shift, uint64_t seed) {
  if (!(shift > 0)) return ConfigError("shift", "must be > 0");
  if (count == 0) return ds;
  if (ds.empty()) return ConfigError("ds", "cannot inject around an empty dataset");

  const auto d = static_cast<size_t>(ds.dim());
  std::vector<double> center(d, 0.0);
  for (const Example& e : ds.examples()) {
    for (size_t j = 0; j < d; ++j) center[j] += e.features[j];
  }
  for (double& x : center) x /= static_cast<double>(ds.size());

  Rng rng(seed);
  std::vector<double> direction = NormalVector(ds.dim(), 1.0, rng);
  double norm = 0.0;
  for (double x : direction) norm += x * x;
  norm = std::sqrt(norm);
  for (size_t j = 0; j < d; ++j) center[j] += shift * direction[j] / norm;

  boost::random::uniform_int_distribution<int> label(0, ds.num_classes() - 1);
  std::vector<Example> examples = ds.examples();
  ExampleId next_id = ds.max_id() + 1;
  for (size_t i = 0; i < count; ++i) {
    Example e;
    e.id = next_id++;
    e.features = NormalVector(ds.dim(), 1.0, rng);
    for (size_t j = 0; j < d; ++j) e.features[j] += center[j];
    e.label = label(rng);
    e.tag = Tag{Provenance::kOod, std::nullopt};
    examples.push_back(std::move(e));
  }
  auto lineage = ds.lineage();
  lineage.push_back({"inject_ood", seed,
                     absl::StrCat("count=", count, ",shift=", FormatDouble(shift))});
  return Dataset::Create(ds.dim(), ds.num_classes(), std::move(examples),
                         std::move(lineage));
}

double CosineSimilarity(std::span<const double> a, std::span<const double> b) {
  if (std::equal(a.begin(), a.end(), b.begin(), b.end())) return 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

absl::StatusOr<std::pair<Dataset, DedupReport>> Deduplicate(const Dataset& ds,
                                                            double threshold) {
  if (!(threshold > 0 && threshold <= 1)) {
    return ConfigError("threshold", "must lie in (0, 1]");
  }
  for (const Example& e : ds.examples()) {
    const bool zero = std::all_of(e.features.begin(), e.features.end(),
                                  [](double x) { return x == 0.0; });
    if (zero) {
      return absl::FailedPreconditionError(absl::StrCat(
          "example ", e.id, " has a zero feature vector; cosine undefined"));
    }
  }
  const size_t n = ds.size();
  DisjointSets sets(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (CosineSimilarity(ds[i].features, ds[j].features) >= threshold) {
        sets.Union(i, j);
      }
    }
  }
  std::vector<std::vector<ExampleId>> by_root(n);
  for (size_t i = 0; i < n; ++i) by_root[sets.Find(i)].push_back(ds[i].id);

  DedupReport report;
  report.threshold = threshold;
  // Roots are component minima and ids ascend with index, so iterating roots
  // in index order yields clusters ordered by minimum id.
  for (auto& members : by_root) {
    if (members.size() < 2) continue;
    for (size_t j = 1; j < members.size(); ++j) report.removed_ids.insert(members[j]);
    report.clusters.push_back(std::move(members));
  }
  if (report.removed_ids.empty()) return std::make_pair(ds, std::move(report));

  auto reduced = RemoveExamples(ds, report.removed_ids);
  if (!reduced.ok()) return reduced.status();
  std::vector<LineageRecord> lineage = ds.lineage();
  lineage.push_back(
      {"deduplicate", 0, absl::StrCat("threshold=", FormatDouble(threshold))});
  auto out = Dataset::Create(ds.dim(), ds.num_classes(), reduced->examples(),
                             std::move(lineage));
  if (!out.ok()) return out.status();
  return std::make_pair(*std::move(out), std::move(report));
}

absl::StatusOr<Dataset> RemoveExamples(const Dataset& ds, const IdSet& ids) {
  if (ids.empty()) return ds;
  std::vector<ExampleId> missing;
  for (ExampleId id : ids) {
    if (!ds.Contains(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    return absl::NotFoundError(absl::StrCat(
        "cannot remove unknown example ids: ", absl::StrJoin(missing, ",")));
  }
  std::vector<Example> kept;
  kept.reserve(ds.size() - ids.size());
  for (const Example& e : ds.examples()) {
    if (!ids.contains(e.id)) kept.push_back(e);
  }
  std::string id_list = absl::StrJoin(ids, ",");
  auto lineage = ds.lineage();
  lineage.push_back({"remove_examples", 0,
                     absl::StrCat("count=", ids.size(),
                                  ",ids_hash=", GitBlobHash(id_list))});
  return Dataset::Create(ds.dim(), ds.num_classes(), std::move(kept),
                         std::move(lineage));
}

std::string SerializeDataset(const Dataset& ds) {
  json lineage = json::array();
  for (const LineageRecord& r : ds.lineage()) {
    lineage.push_back(
        {{"operation", r.operation}, {"seed", r.seed}, {"params", r.params}});
  }
  json header = {{"dim", ds.dim()},
                 {"num_classes", ds.num_classes()},
                 {"seed_lineage", lineage}};
  std::string out = header.dump();
  out.push_back('\n');
  for (const Example& e : ds.examples()) {
    json line = {{"id", e.id},
                 {"label", e.label},
                 {"tag", ProvenanceName(e.tag.kind)},
                 {"features", e.features}};
    if (e.tag.of_id) line["of_id"] = *e.tag.of_id;
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

absl::StatusOr<Dataset> ParseDataset(absl::string_view text) {
  std::vector<absl::string_view> lines =
      absl::StrSplit(text, '\n', absl::SkipEmpty());
  if (lines.empty()) return absl::DataLossError("dataset file is empty");
  try {
    const json header = json::parse(lines[0]);
    const int dim = header.at("dim").get<int>();
    const int num_classes = header.at("num_classes").get<int>();
    std::vector<LineageRecord> lineage;
    for (const json& r : header.at("seed_lineage")) {
      lineage.push_back({r.at("operation").get<std::string>(),
                         r.at("seed").get<uint64_t>(),
                         r.at("params").get<std::string>()});
    }
    std::vector<Example> examples;
    examples.reserve(lines.size() - 1);
    for (size_t i = 1; i < lines.size(); ++i) {
      const json line = json::parse(lines[i]);
      Example e;
      e.id = line.at("id").get<ExampleId>();
      e.label = line.at("label").get<int>();
      e.features = line.at("features").get<std::vector<double>>();
      const std::string tag = line.at("tag").get<std::string>();
      if (tag == "original") {
        e.tag.kind = Provenance::kOriginal;
      } else if (tag == "duplicate") {
        e.tag.kind = Provenance::kDuplicate;
        e.tag.of_id = line.at("of_id").get<ExampleId>();
      } else if (tag == "ood") {
        e.tag.kind = Provenance::kOod;
      } else {
        return absl::DataLossError(
            absl::StrCat("line ", i + 1, ": unknown tag '", tag, "'"));
      }
      examples.push_back(std::move(e));
    }
    auto ds = Dataset::Create(dim, num_classes, std::move(examples),
                              std::move(lineage));
    if (!ds.ok()) return absl::DataLossError(ds.status().message());
    return ds;
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("malformed dataset: ", e.what()));
  }
}

absl::StatusOr<Dataset> ReadDatasetFile(const std::string& path) {
  auto text = ReadFile(path);
  if (!text.ok()) return text.status();
  return ParseDataset(*text);
}

absl::Status WriteDatasetFile(const Dataset& ds, const std::string& path) {
  return WriteFileAtomic(path, SerializeDataset(ds));
}

}  // namespace onion_audit
