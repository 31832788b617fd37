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

#include "onion_audit/shadow.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_split.h"
#include "json.hpp"
#include "onion_audit/io.h"
#include "onion_audit/parallel.h"
#include "onion_audit/seeding.h"

namespace onion_audit {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

size_t Argmax(std::span<const double> v) {
  return static_cast<size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

absl::StatusOr<RowResult> TrainRow(const Dataset& ds, const MembershipMatrix& mm,
                                   const TrainConfig& config, size_t row) {
  const IdSet members = mm.Members(row);
  TrainConfig row_config = config;
  row_config.seed = RowTrainSeed(config, row);
  RowResult result;
  result.row = row;
  auto model = Train(ds, members, row_config);
  if (!model.ok() && absl::IsAborted(model.status())) {
    row_config.lr *= 0.5;
    result.retried = true;
    model = Train(ds, members, row_config);
  }
  if (!model.ok()) {
    return absl::Status(model.status().code(),
                        absl::StrCat("ensemble row ", row, ": ",
                                     model.status().message()));
  }
  result.gaps.resize(ds.size());
  std::vector<double> logits(static_cast<size_t>(model->num_classes));
  size_t held_out = 0, held_out_correct = 0, all_correct = 0;
  for (size_t e = 0; e < ds.size(); ++e) {
    ForwardUnchecked(*model, ds[e].features, logits);
    result.gaps[e] = *LogitGap(logits);
    const bool correct = Argmax(logits) == static_cast<size_t>(ds[e].label);
    all_correct += correct;
    if (!mm.included(row, e)) {
      ++held_out;
      held_out_correct += correct;
    }
  }
  result.accuracy =
      held_out > 0 ? static_cast<double>(held_out_correct) / static_cast<double>(held_out)
                   : static_cast<double>(all_correct) / static_cast<double>(ds.size());
  return result;
}

json TrainConfigJson(const TrainConfig& c) {
  return {{"arch", ArchName(c.arch)},   {"hidden_width", c.hidden_width},
          {"svm_c", c.svm_c},           {"epochs", c.epochs},
          {"lr", c.lr},                 {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay}, {"seed", c.seed}};
}

absl::StatusOr<TrainConfig> TrainConfigFromJson(const json& j) {
  TrainConfig c;
  auto arch = ParseArch(j.at("arch").get<std::string>());
  if (!arch.ok()) return arch.status();
  c.arch = *arch;
  c.hidden_width = j.at("hidden_width").get<int>();
  c.svm_c = j.at("svm_c").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

std::string GapsPath(const std::string& dir) { return (fs::path(dir) / "gaps.bin").string(); }
std::string IncludePath(const std::string& dir) { return (fs::path(dir) / "include.bin").string(); }
std::string ManifestPath(const std::string& dir) { return (fs::path(dir) / "manifest.json").string(); }
std::string JournalPath(const std::string& dir) { return (fs::path(dir) / "rows.jsonl").string(); }

void EncodeF64(std::string& out, double v) {
  const auto bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double DecodeF64(const char* p) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

json StoreManifest(const Dataset& ds, const MembershipMatrix& mm,
                   const TrainConfig& config) {
  return {{"format", "onion-audit-observations"},
          {"version", 1},
          {"n_models", mm.n_models()},
          {"n_examples", mm.n_examples()},
          {"subset_prob", mm.subset_prob()},
          {"membership_seed", mm.master_seed()},
          {"train_config", TrainConfigJson(config)},
          {"config_hash", config.ConfigHash()},
          {"dataset_hash", GitBlobHash(SerializeDataset(ds))},
          {"example_ids", mm.example_ids()},
          {"complete", false}};
}

}  // namespace

MembershipMatrix::MembershipMatrix(std::vector<ExampleId> example_ids,
                                   size_t n_models, double subset_prob,
                                   uint64_t master_seed,
                                   std::vector<uint8_t> include)
    : example_ids_(std::move(example_ids)),
      n_models_(n_models),
      subset_prob_(subset_prob),
      master_seed_(master_seed),
      include_(std::move(include)) {
  column_.reserve(example_ids_.size());
  for (size_t i = 0; i < example_ids_.size(); ++i) column_[example_ids_[i]] = i;
}

IdSet MembershipMatrix::Members(size_t model) const {
  IdSet out;
  const auto cells = row(model);
  for (size_t e = 0; e < cells.size(); ++e) {
    if (cells[e]) out.insert(example_ids_[e]);
  }
  return out;
}

std::optional<size_t> MembershipMatrix::ColumnOf(ExampleId id) const {
  auto it = column_.find(id);
  if (it == column_.end()) return std::nullopt;
  return it->second;
}

absl::StatusOr<MembershipMatrix> SampleMembership(
    const std::vector<ExampleId>& example_ids, size_t n_models,
    double subset_prob, uint64_t master_seed) {
  if (!(subset_prob > 0 && subset_prob < 1)) {
    return absl::InvalidArgumentError("subset_prob: must lie in (0, 1)");
  }
  if (n_models < 2 * kMinPerSide) {
    return absl::InvalidArgumentError(absl::StrCat(
        "n_models: ", n_models, " models cannot give every example ",
        kMinPerSide, " in-models and ", kMinPerSide, " out-models"));
  }
  {
    std::vector<ExampleId> sorted = example_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      return absl::InvalidArgumentError("example_ids: duplicate id");
    }
  }
  const size_t n = example_ids.size();
  std::vector<uint8_t> include(n_models * n);
  for (size_t m = 0; m < n_models; ++m) {
    for (size_t e = 0; e < n; ++e) {
      const double u =
          UnitFromBits(DeriveSeed(master_seed, "membership", m, example_ids[e]));
      include[m * n + e] = u < subset_prob ? 1 : 0;
    }
  }
  for (size_t e = 0; e < n; ++e) {
    size_t in = 0;
    for (size_t m = 0; m < n_models; ++m) in += include[m * n + e];
    for (size_t m = 0; m < n_models && in < kMinPerSide; ++m) {
      if (!include[m * n + e]) {
        include[m * n + e] = 1;
        ++in;
      }
    }
    for (size_t m = 0; m < n_models && n_models - in < kMinPerSide; ++m) {
      if (include[m * n + e]) {
        include[m * n + e] = 0;
        --in;
      }
    }
  }
  return MembershipMatrix(example_ids, n_models, subset_prob, master_seed,
                          std::move(include));
}

double ObservationMatrix::MeanAccuracy() const {
  if (model_accuracies.empty()) return 0.0;
  return std::accumulate(model_accuracies.begin(), model_accuracies.end(), 0.0) /
         static_cast<double>(model_accuracies.size());
}

uint64_t RowTrainSeed(const TrainConfig& config, size_t row) {
  return DeriveSeed(config.seed, "row", row);
}

absl::StatusOr<ObservationMatrix> RunEnsemble(const Dataset& ds,
                                              const MembershipMatrix& mm,
                                              const TrainConfig& config,
                                              const EnsembleOptions& options) {
  if (auto s = config.Validate(); !s.ok()) return s;
  if (mm.example_ids() != ds.ids()) {
    return absl::InvalidArgumentError(
        "membership example ids do not match the dataset");
  }
  const size_t n_models = mm.n_models();
  std::vector<size_t> order = options.row_order;
  if (order.empty()) {
    order.resize(n_models);
    std::iota(order.begin(), order.end(), size_t{0});
  } else {
    std::vector<size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i] != i || sorted.size() != n_models) {
        return absl::InvalidArgumentError("row_order: not a permutation of rows");
      }
    }
  }

  std::vector<RowResult> rows(n_models);
  std::vector<bool> done(n_models, false);
  for (const auto& [r, result] : options.completed) {
    if (r >= n_models || result.gaps.size() != ds.size()) {
      return absl::InvalidArgumentError(
          absl::StrCat("completed row ", r, " does not fit this ensemble"));
    }
    rows[r] = result;
    done[r] = true;
  }

  std::mutex mu;
  absl::Status first_error;
  size_t first_error_row = n_models;
  ParallelFor(order.size(), options.workers, [&](size_t i) {
    const size_t r = order[i];
    if (done[r]) return;
    {
      std::lock_guard<std::mutex> lock(mu);
      if (!first_error.ok()) return;
    }
    auto result = TrainRow(ds, mm, config, r);
    std::lock_guard<std::mutex> lock(mu);
    if (!result.ok()) {
      if (first_error.ok() || r < first_error_row) {
        first_error = result.status();
        first_error_row = r;
      }
      return;
    }
    if (options.on_row && first_error.ok()) {
      if (auto s = options.on_row(*result); !s.ok()) {
        first_error = s;
        first_error_row = r;
      }
    }
    rows[r] = *std::move(result);
  });
  if (!first_error.ok()) return first_error;

  ObservationMatrix obs;
  obs.membership = mm;
  obs.train_config = config;
  obs.gaps.resize(n_models * ds.size());
  obs.model_accuracies.resize(n_models);
  for (size_t r = 0; r < n_models; ++r) {
    std::copy(rows[r].gaps.begin(), rows[r].gaps.end(),
              obs.gaps.begin() + static_cast<std::ptrdiff_t>(r * ds.size()));
    obs.model_accuracies[r] = rows[r].accuracy;
  }
  for (double g : obs.gaps) {
    if (!std::isfinite(g)) return absl::InternalError("non-finite logit gap");
  }
  return obs;
}

absl::StatusOr<std::vector<double>> ObserveTarget(const Model& model,
                                                  const Dataset& ds) {
  const int expected_classes =
      model.arch == Arch::kLinearSvm ? 2 : ds.num_classes();
  if (model.dim != ds.dim() || model.num_classes != expected_classes) {
    return absl::InvalidArgumentError(absl::StrCat(
        "shape mismatch: model is ", model.dim, "->", model.num_classes,
        ", dataset is ", ds.dim(), "->", ds.num_classes()));
  }
  std::vector<double> out(ds.size());
  std::vector<double> logits(static_cast<size_t>(model.num_classes));
  for (size_t e = 0; e < ds.size(); ++e) {
    ForwardUnchecked(model, ds[e].features, logits);
    out[e] = *LogitGap(logits);
  }
  return out;
}

std::string PackBits(std::span<const uint8_t> cells) {
  std::string out((cells.size() + 7) / 8, '\0');
  for (size_t i = 0; i < cells.size(); ++i) {
    if (cells[i]) out[i / 8] = static_cast<char>(out[i / 8] | (1 << (i % 8)));
  }
  return out;
}

std::vector<uint8_t> UnpackBits(absl::string_view bytes, size_t count) {
  std::vector<uint8_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    out[i] = (static_cast<uint8_t>(bytes[i / 8]) >> (i % 8)) & 1;
  }
  return out;
}

absl::StatusOr<ObservationStore> ObservationStore::Open(
    const std::string& dir, const Dataset& ds, const MembershipMatrix& mm,
    const TrainConfig& config, bool resume) {
  ObservationStore store;
  store.dir_ = dir;
  store.n_examples_ = mm.n_examples();
  json manifest = StoreManifest(ds, mm, config);
  std::error_code ec;
  const bool exists = fs::exists(ManifestPath(dir), ec);

  if (resume && exists) {
    auto text = ReadFile(ManifestPath(dir));
    if (!text.ok()) return text.status();
    json existing;
    try {
      existing = json::parse(*text);
    } catch (const json::exception& e) {
      return absl::DataLossError(absl::StrCat("corrupt store manifest: ", e.what()));
    }
    for (const char* key : {"n_models", "n_examples", "subset_prob", "membership_seed",
                            "config_hash", "dataset_hash", "example_ids"}) {
      if (existing.value(key, json()) != manifest[key]) {
        return absl::FailedPreconditionError(absl::StrCat(
            "cannot resume store ", dir, ": ", key, " differs from this run"));
      }
    }
    auto journal = ReadFile(JournalPath(dir));
    auto gaps = ReadFile(GapsPath(dir));
    if (!gaps.ok()) return gaps.status();
    const size_t row_bytes = 8 * store.n_examples_;
    if (journal.ok()) {
      for (absl::string_view line : absl::StrSplit(*journal, '\n', absl::SkipEmpty())) {
        json entry;
        try {
          entry = json::parse(line);
        } catch (const json::exception&) {
          break;  // torn final line from an interrupted run
        }
        RowResult row;
        row.row = entry.at("row").get<size_t>();
        row.accuracy = entry.at("accuracy").get<double>();
        row.retried = entry.at("retried").get<bool>();
        if ((row.row + 1) * row_bytes > gaps->size()) {
          return absl::DataLossError("journaled row lies beyond gaps.bin");
        }
        row.gaps.resize(store.n_examples_);
        for (size_t e = 0; e < store.n_examples_; ++e) {
          row.gaps[e] = DecodeF64(gaps->data() + row.row * row_bytes + 8 * e);
        }
        store.completed_[row.row] = std::move(row);
      }
    }
    return store;
  }

  fs::create_directories(dir, ec);
  if (ec) return absl::InternalError(absl::StrCat("cannot create ", dir, ": ", ec.message()));
  {
    std::ofstream gaps(GapsPath(dir), std::ios::binary | std::ios::trunc);
    if (!gaps) return absl::InternalError(absl::StrCat("cannot create ", GapsPath(dir)));
    const std::string zeros(8 * mm.n_examples(), '\0');
    for (size_t m = 0; m < mm.n_models(); ++m) gaps.write(zeros.data(), static_cast<std::streamsize>(zeros.size()));
  }
  if (auto s = WriteFileAtomic(IncludePath(dir), PackBits(mm.cells())); !s.ok()) return s;
  if (auto s = WriteFileAtomic(JournalPath(dir), ""); !s.ok()) return s;
  if (auto s = WriteFileAtomic(ManifestPath(dir), manifest.dump(2) + "\n"); !s.ok()) return s;
  return store;
}

absl::Status ObservationStore::AppendRow(const RowResult& row) {
  std::string bytes;
  bytes.reserve(8 * row.gaps.size());
  for (double g : row.gaps) EncodeF64(bytes, g);
  {
    std::fstream gaps(GapsPath(dir_), std::ios::binary | std::ios::in | std::ios::out);
    if (!gaps) return absl::InternalError(absl::StrCat("cannot open ", GapsPath(dir_)));
    gaps.seekp(static_cast<std::streamoff>(row.row * 8 * n_examples_));
    gaps.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!gaps.flush()) return absl::InternalError("gaps.bin write failed");
  }
  std::ofstream journal(JournalPath(dir_), std::ios::app);
  journal << json{{"row", row.row}, {"accuracy", row.accuracy}, {"retried", row.retried}}.dump()
          << "\n";
  if (!journal.flush()) return absl::InternalError("rows.jsonl write failed");
  return absl::OkStatus();
}

absl::Status ObservationStore::Finalize(const ObservationMatrix& obs) {
  auto text = ReadFile(ManifestPath(dir_));
  if (!text.ok()) return text.status();
  json manifest = json::parse(*text);
  manifest["complete"] = true;
  manifest["model_accuracies"] = obs.model_accuracies;
  return WriteFileAtomic(ManifestPath(dir_), manifest.dump(2) + "\n");
}

absl::StatusOr<ObservationMatrix> LoadObservationStore(const std::string& dir) {
  std::error_code ec;
  if (!fs::exists(ManifestPath(dir), ec)) {
    return absl::NotFoundError(absl::StrCat("no observation store at ", dir,
                                            " (run train-shadows first)"));
  }
  auto text = ReadFile(ManifestPath(dir));
  if (!text.ok()) return text.status();
  try {
    const json manifest = json::parse(*text);
    if (!manifest.value("complete", false)) {
      return absl::FailedPreconditionError(absl::StrCat(
          "observation store ", dir, " is incomplete; rerun with --resume"));
    }
    const auto n_models = manifest.at("n_models").get<size_t>();
    const auto n_examples = manifest.at("n_examples").get<size_t>();
    auto ids = manifest.at("example_ids").get<std::vector<ExampleId>>();
    auto config = TrainConfigFromJson(manifest.at("train_config"));
    if (!config.ok()) return absl::DataLossError(config.status().message());
    auto gaps = ReadFile(GapsPath(dir));
    if (!gaps.ok()) return gaps.status();
    auto include = ReadFile(IncludePath(dir));
    if (!include.ok()) return include.status();
    if (ids.size() != n_examples || gaps->size() != 8 * n_models * n_examples ||
        include->size() != (n_models * n_examples + 7) / 8) {
      return absl::DataLossError(absl::StrCat("observation store ", dir,
                                              " has inconsistent file sizes"));
    }
    ObservationMatrix obs;
    obs.membership = MembershipMatrix(
        std::move(ids), n_models, manifest.at("subset_prob").get<double>(),
        manifest.at("membership_seed").get<uint64_t>(),
        UnpackBits(*include, n_models * n_examples));
    obs.train_config = *config;
    obs.gaps.resize(n_models * n_examples);
    for (size_t i = 0; i < obs.gaps.size(); ++i) obs.gaps[i] = DecodeF64(gaps->data() + 8 * i);
    obs.model_accuracies = manifest.at("model_accuracies").get<std::vector<double>>();
    return obs;
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("corrupt store manifest: ", e.what()));
  }
}

absl::StatusOr<ObservationMatrix> RunEnsembleToStore(
    const Dataset& ds, const MembershipMatrix& mm, const TrainConfig& config,
    const std::string& dir, bool resume, EnsembleOptions options) {
  auto store = ObservationStore::Open(dir, ds, mm, config, resume);
  if (!store.ok()) return store.status();
  options.completed = store->completed();
  auto user_callback = std::move(options.on_row);
  options.on_row = [&](const RowResult& row) -> absl::Status {
    if (auto s = store->AppendRow(row); !s.ok()) return s;
    return user_callback ? user_callback(row) : absl::OkStatus();
  };
  auto obs = RunEnsemble(ds, mm, config, options);
  if (!obs.ok()) return obs.status();
  if (auto s = store->Finalize(*obs); !s.ok()) return s;
  return obs;
}

}  // namespace onion_audit
