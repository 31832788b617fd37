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

#include "onion_audit/cli.h"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_split.h"
#include "json.hpp"
#include "onion_audit/config.h"
#include "onion_audit/dataset.h"
#include "onion_audit/io.h"
#include "onion_audit/lira.h"
#include "onion_audit/onion.h"
#include "onion_audit/privinf.h"
#include "onion_audit/seeding.h"
#include "onion_audit/shadow.h"
#include "onion_audit/trainer.h"

namespace onion_audit {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Settings and flag > file > default resolution.

struct Settings {
  // run
  uint64_t seed = 1;
  int workers = 1;
  std::string out = "run";
  bool resume = false;
  bool json = false;
  std::string config_path;
  // data
  std::string data_path;
  size_t n = 2000;
  int dim = 16;
  int num_classes = 4;
  double class_sep = 6.0;
  double outlier_frac = 0.05;
  double outlier_scale = 3.0;
  size_t duplicates = 0;
  size_t ood_points = 0;
  double ood_shift = 10.0;
  // train
  std::string arch = "logreg";
  int epochs = TrainConfig().epochs;
  double lr = TrainConfig().lr;
  int batch_size = TrainConfig().batch_size;
  double weight_decay = TrainConfig().weight_decay;
  int hidden_width = TrainConfig().hidden_width;
  double svm_c = TrainConfig().svm_c;
  // shadow
  size_t n_models = 512;
  double subset_prob = 0.5;
  // onion
  size_t onion_k = 200;
  std::string mode = "top";
  size_t ood = 0;
  bool dedup = false;
  double dedup_threshold = 0.85;
  size_t iterative = 0;
  size_t band_replicates = 0;
  std::string fpr_grid = "0.001,0.01,0.1";
  // privinf
  std::string privinf_targets;
  std::string privinf_group;
  size_t privinf_count = 5;
  size_t privinf_k = 10;
  // unlearn-sim
  std::string unlearn_targets;
  std::string unlearn_group = "safe";
  size_t unlearn_count = 10;
  size_t budget = 10;
  size_t rounds = 5;
  // stability
  size_t half_models = 512;
  size_t stability_k = 200;
  size_t stability_targets = 5;
  size_t stability_candidates = 10;
  // report
  std::string run_dir;
  size_t listing_k = 10;
};

template <typename T>
absl::Status ParseInto(const std::string& key, const std::string& text, T* out) {
  bool ok = true;
  if constexpr (std::is_same_v<T, std::string>) {
    *out = text;
  } else if constexpr (std::is_same_v<T, bool>) {
    ok = absl::SimpleAtob(text, out);
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = absl::SimpleAtod(text, out);
  } else {
    ok = absl::SimpleAtoi(text, out);
  }
  if (!ok) {
    return absl::InvalidArgumentError(
        absl::StrCat(key, ": cannot parse '", text, "' from the config file"));
  }
  return absl::OkStatus();
}

class Registry {
 public:
  template <typename T>
  void Add(CLI::App* app, const std::string& flag, const std::string& key, T* var,
           const std::string& help) {
    CLI::Option* opt;
    if constexpr (std::is_same_v<T, bool>) {
      opt = app->add_flag(flag, *var, help);
    } else {
      opt = app->add_option(flag, *var, help)->capture_default_str();
    }
    bindings_.push_back(
        {opt, key,
         [key, var](const std::string& text) { return ParseInto(key, text, var); },
         [var] { return json(*var); }});
  }

  // Fills every option not given on the command line from the file.
  absl::Status ApplyFile(const ConfigFile& file) {
    for (const auto& [key, value] : file.values()) {
      auto it = std::find_if(bindings_.begin(), bindings_.end(),
                             [&](const Binding& b) { return b.key == key; });
      if (it == bindings_.end()) {
        return absl::InvalidArgumentError(absl::StrCat("config file: unknown key '", key, "'"));
      }
      if (it->option->count() > 0) continue;
      if (auto s = it->set(value); !s.ok()) return s;
    }
    return absl::OkStatus();
  }

  json Resolved() const {
    json j = json::object();
    for (const Binding& b : bindings_) j[b.key] = b.get();
    return j;
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::function<absl::Status(const std::string&)> set;
    std::function<json()> get;
  };
  std::vector<Binding> bindings_;
};

absl::StatusOr<std::vector<double>> ParseDoubleList(const std::string& key,
                                                    const std::string& text) {
  std::vector<double> out;
  for (absl::string_view part : absl::StrSplit(text, ',', absl::SkipWhitespace())) {
    double v = 0.0;
    if (!absl::SimpleAtod(part, &v)) {
      return absl::InvalidArgumentError(absl::StrCat(key, ": bad number '", part, "'"));
    }
    out.push_back(v);
  }
  return out;
}

absl::StatusOr<std::vector<ExampleId>> ParseIdList(const std::string& key,
                                                   const std::string& text) {
  std::vector<ExampleId> out;
  for (absl::string_view part : absl::StrSplit(text, ',', absl::SkipWhitespace())) {
    ExampleId v = 0;
    if (!absl::SimpleAtoi(part, &v)) {
      return absl::InvalidArgumentError(absl::StrCat(key, ": bad example id '", part, "'"));
    }
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directory bookkeeping.

class RunContext {
 public:
  RunContext(const Settings& settings, std::string command, std::ostream& err)
      : settings_(settings), command_(std::move(command)), err_(err), start_(Clock::now()) {}

  const Settings& settings() const { return settings_; }
  const std::string& dir() const { return settings_.out; }
  std::string Path(const std::string& name) const { return (fs::path(dir()) / name).string(); }

  absl::Status Prepare() {
    std::error_code ec;
    fs::create_directories(dir(), ec);
    if (ec) return absl::InternalError(absl::StrCat("cannot create ", dir(), ": ", ec.message()));
    Emit({{"event", "start"}, {"command", command_}, {"out", dir()}});
    return absl::OkStatus();
  }

  absl::Status Write(const std::string& name, const std::string& content) {
    if (auto s = WriteFileAtomic(Path(name), content); !s.ok()) return s;
    outputs_[name] = GitBlobHash(content);
    return absl::OkStatus();
  }

  void RecordInput(const std::string& name, const std::string& content) {
    inputs_[name] = GitBlobHash(content);
  }

  void Emit(const json& line) { err_ << line.dump() << "\n" << std::flush; }

  OnionConfig MakeOnionConfig(const TrainConfig& train) {
    OnionConfig c;
    c.n_models = settings_.n_models;
    c.train_config = train;
    c.k = settings_.onion_k;
    c.subset_prob = settings_.subset_prob;
    c.master_seed = settings_.seed;
    c.workers = settings_.workers;
    c.store_dir = Path("stores");
    c.resume = settings_.resume;
    c.progress = [this](std::string_view stage, uint64_t index, size_t done, size_t total) {
      const std::string key = absl::StrCat(std::string(stage), "-", index);
      if (done == 0) stage_start_[key] = Clock::now();
      if (done == total && stage_start_.contains(key)) {
        timings_[key] += Seconds(stage_start_[key]);
        stage_start_.erase(key);
      }
      Emit({{"event", "ensemble"},
            {"stage", std::string(stage)},
            {"index", index},
            {"done", done},
            {"total", total}});
    };
    return c;
  }

  // Hashes the persisted shadow observations so reruns can be compared.
  absl::Status RecordStores() {
    const fs::path stores = fs::path(dir()) / "stores";
    std::error_code ec;
    if (!fs::exists(stores, ec)) return absl::OkStatus();
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(stores, ec)) {
      if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const fs::path& d : dirs) {
      for (const char* file : {"gaps.bin", "include.bin"}) {
        auto content = ReadFile((d / file).string());
        if (!content.ok()) continue;
        outputs_[absl::StrCat("stores/", d.filename().string(), "/", file)] =
            GitBlobHash(*content);
      }
    }
    return absl::OkStatus();
  }

  absl::Status Finish(const json& resolved) {
    if (auto s = RecordStores(); !s.ok()) return s;
    timings_["total"] = Seconds(start_);
    json m;
    m["tool"] = "onion_audit";
    m["version"] = kToolVersion;
    m["command"] = command_;
    m["master_seed"] = settings_.seed;
    m["config"] = resolved;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["timings_seconds"] = timings_;
    Emit({{"event", "done"}, {"command", command_}, {"seconds", timings_["total"]}});
    return WriteFileAtomic(Path("manifest.json"), m.dump(2) + "\n");
  }

 private:
  static double Seconds(Clock::time_point since) {
    return std::chrono::duration<double>(Clock::now() - since).count();
  }

  const Settings& settings_;
  std::string command_;
  std::ostream& err_;
  Clock::time_point start_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
  std::map<std::string, double> timings_;
  std::map<std::string, Clock::time_point> stage_start_;
};

// ---------------------------------------------------------------------------
// Shared pieces.

absl::StatusOr<TrainConfig> MakeTrainConfig(const Settings& s) {
  auto arch = ParseArch(s.arch);
  if (!arch.ok()) return arch.status();
  TrainConfig t;
  t.arch = *arch;
  t.epochs = s.epochs;
  t.lr = s.lr;
  t.batch_size = s.batch_size;
  t.weight_decay = s.weight_decay;
  t.hidden_width = s.hidden_width;
  t.svm_c = s.svm_c;
  if (auto st = t.Validate(); !st.ok()) return st;
  return t;
}

// The configured mixture, with any injections, generated from `seed`.
absl::StatusOr<Dataset> GenerateDataset(const Settings& s, uint64_t seed) {
  MixtureParams p;
  p.n = s.n;
  p.dim = s.dim;
  p.num_classes = s.num_classes;
  p.class_sep = s.class_sep;
  p.outlier_frac = s.outlier_frac;
  p.outlier_scale = s.outlier_scale;
  p.seed = seed;
  auto ds = GenerateGaussianMixture(p);
  if (!ds.ok()) return ds.status();
  if (s.duplicates > 0) {
    ds = InjectDuplicates(*ds, s.duplicates, DeriveSeed(seed, "data-duplicates"));
    if (!ds.ok()) return ds.status();
  }
  if (s.ood_points > 0) {
    ds = InjectOod(*ds, s.ood_points, s.ood_shift, DeriveSeed(seed, "data-ood"));
  }
  return ds;
}

// Reads --data, or generates the configured mixture from the master seed.
absl::StatusOr<Dataset> LoadDataset(RunContext& run) {
  const Settings& s = run.settings();
  if (!s.data_path.empty()) {
    auto text = ReadFile(s.data_path);
    if (!text.ok()) return text.status();
    run.RecordInput(s.data_path, *text);
    return ParseDataset(*text);
  }
  return GenerateDataset(s, s.seed);
}

std::string IdsCsv(const IdSet& ids) {
  std::string out = "example_id\n";
  for (ExampleId id : ids) absl::StrAppend(&out, id, "\n");
  return out;
}

json RocSummary(const RocCurve& roc, const std::vector<double>& fpr_grid) {
  json tprs = json::array();
  for (double f : fpr_grid) tprs.push_back({{"fpr", f}, {"tpr", TprAtFpr(roc, f)}});
  return {{"auc", roc.auc}, {"tpr_at_fpr", tprs}};
}

// Writes the onion file set: scores, curves, removal set and summary.
absl::Status WriteOnionOutputs(RunContext& run, const OnionResult& result,
                               const OnionConfig& config, const ToleranceBand* band,
                               const json& extra) {
  if (auto s = run.Write("scores_before.csv", ScoresCsv(result.scores_before)); !s.ok()) return s;
  if (auto s = run.Write("scores_after.csv", ScoresCsv(result.scores_after)); !s.ok()) return s;
  if (auto s = run.Write("roc_baseline.csv", RocCsv(result.baseline_roc)); !s.ok()) return s;
  if (auto s = run.Write("roc_idealized.csv", RocCsv(result.idealized_roc)); !s.ok()) return s;
  if (auto s = run.Write("roc_reality.csv", RocCsv(result.reality_roc)); !s.ok()) return s;
  if (auto s = run.Write("removed_ids.csv", IdsCsv(result.removed_ids)); !s.ok()) return s;
  json summary = json::parse(OnionSummaryJson(result, config, band));
  for (const auto& [key, value] : extra.items()) summary[key] = value;
  if (auto s = run.Write("summary.json", summary.dump(2) + "\n"); !s.ok()) return s;

  // Everything `report` needs to rebuild the file set from the stores.
  json state;
  state["baseline_store"] = fs::relative(result.baseline_source, run.dir()).string();
  state["reality_store"] = fs::relative(result.reality_source, run.dir()).string();
  state["removed_ids"] = std::vector<ExampleId>(result.removed_ids.begin(),
                                                result.removed_ids.end());
  state["mode"] = RemovalModeName(config.mode);
  state["k"] = config.k;
  state["n_models"] = config.n_models;
  state["master_seed"] = config.master_seed;
  state["fpr_grid"] = config.fpr_grid;
  state["extra"] = extra;
  if (band != nullptr) {
    state["band"] = {{"fpr", band->fpr},
                     {"replicate_tprs", band->replicate_tprs},
                     {"width", band->width}};
  }
  return run.Write("run_state.json", state.dump(2) + "\n");
}

absl::StatusOr<std::vector<ExampleId>> ResolveTargets(RunContext& run, const Dataset& ds,
                                                      const OnionConfig& config,
                                                      const std::string& explicit_ids,
                                                      const std::string& group_name,
                                                      size_t count) {
  if (!explicit_ids.empty()) {
    auto ids = ParseIdList("target", explicit_ids);
    if (!ids.ok()) return ids.status();
    for (ExampleId id : *ids) {
      if (!ds.Contains(id)) {
        return absl::InvalidArgumentError(absl::StrCat("target: no example with id ", id));
      }
    }
    return ids;
  }
  if (group_name.empty()) {
    return absl::InvalidArgumentError("give --target ids or a --group to select from");
  }
  auto group = ParseTargetGroup(group_name);
  if (!group.ok()) return group.status();
  TargetSources sources;
  sources.seed = config.master_seed;
  std::optional<Audit> baseline;
  std::optional<OnionResult> onion;
  std::optional<DedupOnionResult> dedup;
  switch (*group) {
    case TargetGroup::kRandom:
    case TargetGroup::kSafe: {
      auto audit = AuditDataset(ds, config, "baseline");
      if (!audit.ok()) return audit.status();
      baseline = *std::move(audit);
      sources.scores = &baseline->scores;
      break;
    }
    case TargetGroup::kSecondLayer: {
      OnionConfig top = config;
      top.mode = RemovalMode::kTop;
      auto result = RunOnion(ds, top);
      if (!result.ok()) return result.status();
      onion = *std::move(result);
      sources.onion = &*onion;
      break;
    }
    case TargetGroup::kDuplicates: {
      auto result = RunOnionDedup(ds, config, run.settings().dedup_threshold);
      if (!result.ok()) return result.status();
      dedup = *std::move(result);
      sources.dedup = &*dedup;
      break;
    }
  }
  return SelectTargets(*group, sources, count);
}

// ---------------------------------------------------------------------------
// Subcommands.

absl::Status CmdGenData(RunContext& run, json& summary) {
  auto ds = LoadDataset(run);
  if (!ds.ok()) return ds.status();
  const std::string text = SerializeDataset(*ds);
  summary = {{"n_examples", ds->size()}, {"dim", ds->dim()},
             {"num_classes", ds->num_classes()}, {"dataset_hash", GitBlobHash(text)}};
  if (auto s = run.Write("dataset.jsonl", text); !s.ok()) return s;
  return run.Write("summary.json", summary.dump(2) + "\n");
}

absl::Status CmdTrainShadows(RunContext& run, const TrainConfig& train, json& summary) {
  auto ds = LoadDataset(run);
  if (!ds.ok()) return ds.status();
  OnionConfig config = run.MakeOnionConfig(train);
  auto audit = AuditDataset(*ds, config, "baseline");
  if (!audit.ok()) return audit.status();
  summary = {{"store", fs::relative(audit->source, run.dir()).string()},
             {"n_models", audit->obs.n_models()},
             {"n_examples", audit->obs.n_examples()},
             {"mean_accuracy", audit->obs.MeanAccuracy()}};
  if (auto s = run.Write("dataset.jsonl", SerializeDataset(*ds)); !s.ok()) return s;
  return run.Write("shadows.json", summary.dump(2) + "\n");
}

absl::Status CmdAudit(RunContext& run, json& summary) {
  const std::string pointer = run.Path("shadows.json");
  auto text = ReadFile(pointer);
  if (!text.ok()) {
    return absl::NotFoundError(absl::StrCat("no observation store under ", run.dir(),
                                            " (run train-shadows first)"));
  }
  json shadows;
  try {
    shadows = json::parse(*text);
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("corrupt ", pointer, ": ", e.what()));
  }
  const std::string store = run.Path(shadows.value("store", std::string()));
  auto obs = LoadObservationStore(store);
  if (!obs.ok()) return obs.status();
  auto audit = AuditObservations(*std::move(obs));
  if (!audit.ok()) return audit.status();
  auto roc = ComputeRoc(audit->obs, audit->loo);
  if (!roc.ok()) return roc.status();
  auto grid = ParseDoubleList("fpr_grid", run.settings().fpr_grid);
  if (!grid.ok()) return grid.status();
  summary = RocSummary(*roc, *grid);
  summary["mean_accuracy"] = audit->obs.MeanAccuracy();
  if (auto s = run.Write("scores.csv", ScoresCsv(audit->scores)); !s.ok()) return s;
  if (auto s = run.Write("roc.csv", RocCsv(*roc)); !s.ok()) return s;
  return run.Write("summary.json", summary.dump(2) + "\n");
}

absl::Status CmdOnion(RunContext& run, const TrainConfig& train, json& summary) {
  const Settings& s = run.settings();
  auto ds = LoadDataset(run);
  if (!ds.ok()) return ds.status();
  OnionConfig config = run.MakeOnionConfig(train);
  auto mode = ParseRemovalMode(s.mode);
  if (!mode.ok()) return mode.status();
  config.mode = *mode;
  auto grid = ParseDoubleList("fpr_grid", s.fpr_grid);
  if (!grid.ok()) return grid.status();
  config.fpr_grid = *grid;
  const int variants = (s.ood > 0) + s.dedup + (s.iterative > 0);
  if (variants > 1) {
    return absl::InvalidArgumentError("--ood, --dedup and --iterative are mutually exclusive");
  }
  if (variants == 1 && config.mode != RemovalMode::kTop) {
    return absl::InvalidArgumentError("mode: variants remove the top layer; use --mode top");
  }
  if (auto st = run.Write("dataset.jsonl", SerializeDataset(*ds)); !st.ok()) return st;

  json extra = json::object();
  absl::StatusOr<OnionResult> result;
  if (s.dedup) {
    auto dedup = RunOnionDedup(*ds, config, s.dedup_threshold);
    if (!dedup.ok()) return dedup.status();
    std::string deltas = "example_id,asr_before,asr_after,delta\n";
    for (const AsrDelta& d : dedup->deltas) {
      absl::StrAppend(&deltas, d.id, ",", FormatDouble(d.asr_before), ",",
                      FormatDouble(d.asr_after), ",",
                      FormatDouble(d.asr_after - d.asr_before), "\n");
    }
    if (auto st = run.Write("dedup_deltas.csv", deltas); !st.ok()) return st;
    extra["dedup"] = {{"threshold", s.dedup_threshold},
                      {"n_clusters", dedup->report.clusters.size()},
                      {"n_removed", dedup->report.removed_ids.size()},
                      {"n_masked_originals", dedup->deltas.size()},
                      {"mean_asr_delta", dedup->mean_delta}};
    result = std::move(dedup->onion);
  } else if (s.iterative > 0) {
    if (config.k % s.iterative != 0) {
      return absl::InvalidArgumentError("iterative: must divide k");
    }
    auto iter = RunIterative(*ds, config, config.k / s.iterative, s.iterative);
    if (!iter.ok()) return iter.status();
    json steps = json::array();
    for (const IdSet& step : iter->step_removed) {
      steps.push_back(std::vector<ExampleId>(step.begin(), step.end()));
    }
    extra["iterative"] = {{"n_steps", s.iterative},
                          {"step_k", config.k / s.iterative},
                          {"overlap_with_oneshot", iter->overlap_with_oneshot},
                          {"step_removed", steps}};
    result = std::move(iter->final_result);
  } else if (s.ood > 0) {
    result = RunOnionOod(*ds, config, s.ood, s.ood_shift);
    extra["ood"] = {{"count", s.ood}, {"shift", s.ood_shift}};
  } else {
    result = RunOnion(*ds, config);
  }
  if (!result.ok()) return result.status();

  std::optional<ToleranceBand> band;
  if (s.band_replicates > 0) {
    // Replicates regenerate the data unless it came from a file.
    const Dataset& fixed = *ds;
    DatasetSource source = [&](uint64_t seed) -> absl::StatusOr<Dataset> {
      if (!s.data_path.empty()) return fixed;
      return GenerateDataset(s, seed);
    };
    auto b = EstimateBand(source, config, s.band_replicates);
    if (!b.ok()) return b.status();
    band = *std::move(b);
  }
  if (auto st = WriteOnionOutputs(run, *result, config, band ? &*band : nullptr, extra);
      !st.ok()) {
    return st;
  }
  summary = json::parse(OnionSummaryJson(*result, config, band ? &*band : nullptr));
  for (const auto& [key, value] : extra.items()) summary[key] = value;
  return absl::OkStatus();
}

absl::Status CmdPrivInf(RunContext& run, const TrainConfig& train, json& summary) {
  const Settings& s = run.settings();
  auto ds = LoadDataset(run);
  if (!ds.ok()) return ds.status();
  OnionConfig config = run.MakeOnionConfig(train);
  auto targets = ResolveTargets(run, *ds, config, s.privinf_targets, s.privinf_group,
                                s.privinf_count);
  if (!targets.ok()) return targets.status();
  auto reference = AuditDataset(*ds, config, "targeted");
  if (!reference.ok()) return reference.status();

  std::vector<InfluenceScores> influence;
  size_t dropped = 0;
  for (ExampleId t : *targets) {
    auto inf = ComputePrivInf(*reference, t, config.workers);
    if (!inf.ok()) return inf.status();
    dropped += inf->n_dropped;
    influence.push_back(*std::move(inf));
  }
  if (auto st = run.Write("privinf.csv", PrivInfCsv(influence)); !st.ok()) return st;

  json rows = json::array();
  std::string csv = "target_id,advantage_before,advantage_after,n_removed\n";
  for (ExampleId t : *targets) {
    if (s.privinf_k == 0) break;
    auto r = TargetedRemoval(*ds, config, t, s.privinf_k, &*reference);
    if (!r.ok()) return r.status();
    absl::StrAppend(&csv, t, ",", FormatDouble(r->advantage_before), ",",
                    FormatDouble(r->advantage_after), ",", r->removed_ids.size(), "\n");
    rows.push_back({{"target_id", t},
                    {"advantage_before", r->advantage_before},
                    {"advantage_after", r->advantage_after},
                    {"removed_ids", std::vector<ExampleId>(r->removed_ids.begin(),
                                                           r->removed_ids.end())},
                    {"accuracy_before", r->accuracy_before},
                    {"accuracy_after", r->accuracy_after}});
  }
  if (s.privinf_k > 0) {
    if (auto st = run.Write("targeted.csv", csv); !st.ok()) return st;
  }
  summary = {{"targets", *targets},
             {"group", s.privinf_group},
             {"k", s.privinf_k},
             {"dropped_candidates", dropped},
             {"targeted_removal", rows}};
  return run.Write("summary.json", summary.dump(2) + "\n");
}

absl::Status CmdUnlearnSim(RunContext& run, const TrainConfig& train, json& summary) {
  const Settings& s = run.settings();
  auto ds = LoadDataset(run);
  if (!ds.ok()) return ds.status();
  OnionConfig config = run.MakeOnionConfig(train);
  auto targets = ResolveTargets(run, *ds, config, s.unlearn_targets, s.unlearn_group,
                                s.unlearn_count);
  if (!targets.ok()) return targets.status();
  auto initial = AuditDataset(*ds, config, "unlearn");
  if (!initial.ok()) return initial.status();
  json reports = json::array();
  for (ExampleId t : *targets) {
    auto report = AdversarialUnlearningScenario(*ds, config, t, s.budget, &*initial, s.rounds);
    if (!report.ok()) return report.status();
    reports.push_back(json::parse(report->ToJson()));
  }
  summary = {{"budget", s.budget}, {"rounds", s.rounds}, {"reports", reports}};
  return run.Write("unlearning.json", summary.dump(2) + "\n");
}

absl::Status CmdStability(RunContext& run, const TrainConfig& train, json& summary) {
  const Settings& s = run.settings();
  auto ds = LoadDataset(run);
  if (!ds.ok()) return ds.status();
  if (s.half_models < 64) {
    return absl::InvalidArgumentError("half_models: must be at least 64");
  }
  OnionConfig config = run.MakeOnionConfig(train);
  config.n_models = s.half_models;
  auto a = AuditDataset(*ds, config, "stability", 0);
  if (!a.ok()) return a.status();
  auto b = AuditDataset(*ds, config, "stability", 1);
  if (!b.ok()) return b.status();
  auto cmp = CompareScores(a->scores, b->scores, s.stability_k);
  if (!cmp.ok()) return cmp.status();
  std::string csv = "example_id,asr_a,asr_b\n";
  for (size_t i = 0; i < a->scores.size(); ++i) {
    absl::StrAppend(&csv, a->scores.entries()[i].id, ",",
                    FormatDouble(a->scores.entries()[i].asr), ",",
                    FormatDouble(b->scores.entries()[i].asr), "\n");
  }
  if (auto st = run.Write("stability.csv", csv); !st.ok()) return st;
  summary = {{"pearson_r", cmp->pearson_r},
             {"topk_overlap", cmp->topk_overlap},
             {"k", cmp->k},
             {"n_models_per_half", s.half_models}};

  auto targets = SelectRemoval(a->scores, std::min(s.stability_targets, a->scores.size()),
                               RemovalMode::kTop);
  if (!targets.ok()) return targets.status();
  auto agreement =
      CompareInfluence(*a, *b, std::vector<ExampleId>(targets->begin(), targets->end()),
                       s.stability_candidates, s.workers);
  if (!agreement.ok()) return agreement.status();
  json per_target = json::array();
  for (const InfluenceAgreement& g : *agreement) {
    per_target.push_back({{"target_id", g.target_id}, {"overlap", g.overlap}});
  }
  summary["privinf_topk"] = {{"k", s.stability_candidates}, {"targets", per_target}};
  return run.Write("stability.json", summary.dump(2) + "\n");
}

absl::Status CmdReport(RunContext& run, json& summary) {
  const std::string run_dir = run.settings().run_dir.empty() ? run.dir() : run.settings().run_dir;
  const std::string state_path = (fs::path(run_dir) / "run_state.json").string();
  auto text = ReadFile(state_path);
  if (!text.ok()) {
    return absl::NotFoundError(absl::StrCat("no onion run state at ", state_path,
                                            " (run the onion command first)"));
  }
  json state;
  try {
    state = json::parse(*text);
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("corrupt ", state_path, ": ", e.what()));
  }
  auto load = [&](const char* key) -> absl::StatusOr<Audit> {
    const std::string dir = (fs::path(run_dir) / state.value(key, std::string())).string();
    auto obs = LoadObservationStore(dir);
    if (!obs.ok()) return obs.status();
    return AuditObservations(*std::move(obs));
  };
  auto baseline = load("baseline_store");
  if (!baseline.ok()) return baseline.status();
  auto reality = load("reality_store");
  if (!reality.ok()) return reality.status();
  IdSet removed;
  for (ExampleId id : state.value("removed_ids", std::vector<ExampleId>())) removed.insert(id);
  IdSet retained;
  for (ExampleId id : baseline->obs.membership.example_ids()) {
    if (!removed.contains(id)) retained.insert(id);
  }
  OnionConfig config;
  auto mode = ParseRemovalMode(state.value("mode", std::string("top")));
  if (!mode.ok()) return mode.status();
  config.mode = *mode;
  config.k = state.value("k", size_t{0});
  config.n_models = state.value("n_models", size_t{0});
  config.master_seed = state.value("master_seed", uint64_t{0});
  config.fpr_grid = state.value("fpr_grid", std::vector<double>());
  auto result = AssembleOnionResult(*baseline, *reality, removed, retained, config.fpr_grid);
  if (!result.ok()) return result.status();
  result->baseline_source = baseline->source;
  result->reality_source = reality->source;

  std::optional<ToleranceBand> band;
  if (state.contains("band")) {
    band.emplace();
    band->fpr = state["band"].value("fpr", 0.01);
    band->replicate_tprs = state["band"].value("replicate_tprs", std::vector<double>());
    band->width = state["band"].value("width", 0.0);
  }
  const json extra = state.value("extra", json::object());
  if (auto st = run.Write("scores_before.csv", ScoresCsv(result->scores_before)); !st.ok()) return st;
  if (auto st = run.Write("scores_after.csv", ScoresCsv(result->scores_after)); !st.ok()) return st;
  if (auto st = run.Write("roc_baseline.csv", RocCsv(result->baseline_roc)); !st.ok()) return st;
  if (auto st = run.Write("roc_idealized.csv", RocCsv(result->idealized_roc)); !st.ok()) return st;
  if (auto st = run.Write("roc_reality.csv", RocCsv(result->reality_roc)); !st.ok()) return st;
  summary = json::parse(OnionSummaryJson(*result, config, band ? &*band : nullptr));
  for (const auto& [key, value] : extra.items()) summary[key] = value;
  if (auto st = run.Write("summary.json", summary.dump(2) + "\n"); !st.ok()) return st;

  // Easiest and hardest examples to attack under the baseline audit.
  std::optional<Dataset> ds;
  if (auto data = ReadDatasetFile((fs::path(run_dir) / "dataset.jsonl").string()); data.ok()) {
    ds = *std::move(data);
  }
  const size_t k = std::min(run.settings().listing_k, result->scores_before.size());
  auto easy = SelectRemoval(result->scores_before, k, RemovalMode::kTop);
  auto hard = SelectRemoval(result->scores_before, k, RemovalMode::kBottom);
  if (!easy.ok()) return easy.status();
  if (!hard.ok()) return hard.status();
  std::string listing = "group,rank,example_id,asr,advantage,label,tag\n";
  auto emit = [&](const char* group, const IdSet& ids, bool descending) {
    std::vector<const ExampleScore*> rows;
    for (ExampleId id : ids) rows.push_back(result->scores_before.Find(id));
    std::stable_sort(rows.begin(), rows.end(), [&](const ExampleScore* a, const ExampleScore* b) {
      if (a->asr != b->asr) return descending ? a->asr > b->asr : a->asr < b->asr;
      return a->id < b->id;
    });
    for (size_t i = 0; i < rows.size(); ++i) {
      std::string label = "", tag = "";
      if (ds) {
        if (auto idx = ds->IndexOf(rows[i]->id)) {
          label = absl::StrCat((*ds)[*idx].label);
          tag = ProvenanceName((*ds)[*idx].tag.kind);
        }
      }
      absl::StrAppend(&listing, group, ",", i + 1, ",", rows[i]->id, ",",
                      FormatDouble(rows[i]->asr), ",", FormatDouble(rows[i]->advantage), ",",
                      label, ",", tag, "\n");
    }
  };
  emit("easy", *easy, true);
  emit("hard", *hard, false);
  return run.Write("examples.csv", listing);
}

}  // namespace

int ExitCodeFor(const absl::Status& status) {
  switch (status.code()) {
    case absl::StatusCode::kOk:
      return kExitOk;
    case absl::StatusCode::kInvalidArgument:
    case absl::StatusCode::kOutOfRange:
      return kExitConfigError;
    case absl::StatusCode::kNotFound:
    case absl::StatusCode::kFailedPrecondition:
    case absl::StatusCode::kDataLoss:
    case absl::StatusCode::kAborted:
      return kExitDataError;
    default:
      return kExitInternalError;
  }
}

int CliMain(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Settings s;
  Registry reg;
  CLI::App app{"Privacy onion auditing on synthetic data", "onion_audit"};
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--config", s.config_path, "INI config file (flags take precedence)");
  reg.Add(&app, "--seed", "run.seed", &s.seed, "Master seed");
  reg.Add(&app, "--workers", "run.workers", &s.workers, "Parallel training threads");
  reg.Add(&app, "--out", "run.out", &s.out, "Run directory");
  reg.Add(&app, "--resume", "run.resume", &s.resume, "Resume journaled ensembles");
  reg.Add(&app, "--json", "run.json", &s.json, "Print summary JSON on stdout");

  reg.Add(&app, "--data", "data.path", &s.data_path, "Dataset file (default: generate)");
  reg.Add(&app, "--n", "data.n", &s.n, "Examples to generate");
  reg.Add(&app, "--dim", "data.dim", &s.dim, "Feature dimension");
  reg.Add(&app, "--classes", "data.num_classes", &s.num_classes, "Number of classes");
  reg.Add(&app, "--class-sep", "data.class_sep", &s.class_sep, "Minimum class mean distance");
  reg.Add(&app, "--outlier-frac", "data.outlier_frac", &s.outlier_frac, "Outlier fraction");
  reg.Add(&app, "--outlier-scale", "data.outlier_scale", &s.outlier_scale,
          "Outlier standard deviation multiple");
  reg.Add(&app, "--duplicates", "data.duplicates", &s.duplicates, "Exact duplicates to inject");
  reg.Add(&app, "--ood-points", "data.ood_points", &s.ood_points, "OOD points to inject");
  reg.Add(&app, "--ood-shift", "data.ood_shift", &s.ood_shift, "Distance of the OOD center");

  reg.Add(&app, "--arch", "train.arch", &s.arch, "logreg, mlp or linear_svm");
  reg.Add(&app, "--epochs", "train.epochs", &s.epochs, "Training epochs");
  reg.Add(&app, "--lr", "train.lr", &s.lr, "Initial learning rate");
  reg.Add(&app, "--batch-size", "train.batch_size", &s.batch_size, "Mini-batch size");
  reg.Add(&app, "--weight-decay", "train.weight_decay", &s.weight_decay, "L2 on weights");
  reg.Add(&app, "--hidden-width", "train.hidden_width", &s.hidden_width, "MLP hidden units");
  reg.Add(&app, "--svm-c", "train.svm_c", &s.svm_c, "SVM C");
  reg.Add(&app, "--n-models", "shadow.n_models", &s.n_models, "Shadow models per ensemble");
  reg.Add(&app, "--subset-prob", "shadow.subset_prob", &s.subset_prob, "Inclusion probability");

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a dataset");
  CLI::App* train = app.add_subcommand("train-shadows", "Train the baseline shadow ensemble");
  CLI::App* audit = app.add_subcommand("audit", "Attack the trained ensemble");
  CLI::App* onion = app.add_subcommand("onion", "Run a removal experiment");
  reg.Add(onion, "--k", "onion.k", &s.onion_k, "Examples to remove");
  reg.Add(onion, "--mode", "onion.mode", &s.mode, "top, bottom or random");
  reg.Add(onion, "--ood", "onion.ood", &s.ood, "OOD points injected after removal");
  reg.Add(onion, "--dedup", "onion.dedup", &s.dedup, "Deduplicate before the experiment");
  reg.Add(onion, "--dedup-threshold", "onion.dedup_threshold", &s.dedup_threshold,
          "Cosine similarity threshold");
  reg.Add(onion, "--iterative", "onion.iterative", &s.iterative, "Remove k in N steps");
  reg.Add(onion, "--band-replicates", "onion.band_replicates", &s.band_replicates,
          "Seed replicates for the tolerance band (0: skip)");
  reg.Add(onion, "--fpr-grid", "onion.fpr_grid", &s.fpr_grid, "Comma-separated FPRs");
  CLI::App* privinf = app.add_subcommand("privinf", "Privacy influence and targeted removal");
  reg.Add(privinf, "--target", "privinf.targets", &s.privinf_targets, "Comma-separated ids");
  reg.Add(privinf, "--group", "privinf.group", &s.privinf_group,
          "duplicates, second_layer, random or safe");
  reg.Add(privinf, "--count", "privinf.count", &s.privinf_count, "Targets to select");
  reg.Add(privinf, "--k", "privinf.k", &s.privinf_k, "Candidates to remove (0: none)");
  reg.Add(privinf, "--dedup-threshold", "privinf.dedup_threshold", &s.dedup_threshold,
          "Cosine similarity threshold");
  CLI::App* unlearn = app.add_subcommand("unlearn-sim", "Adversarial unlearning scenario");
  reg.Add(unlearn, "--target", "unlearn.targets", &s.unlearn_targets, "Comma-separated ids");
  reg.Add(unlearn, "--group", "unlearn.group", &s.unlearn_group, "Target group");
  reg.Add(unlearn, "--count", "unlearn.count", &s.unlearn_count, "Targets to select");
  reg.Add(unlearn, "--budget", "unlearn.budget", &s.budget, "Total unlearning requests");
  reg.Add(unlearn, "--rounds", "unlearn.rounds", &s.rounds, "Adaptive rounds");
  CLI::App* stability = app.add_subcommand("stability", "Split-ensemble score stability");
  reg.Add(stability, "--half-models", "stability.n_models_per_half", &s.half_models,
          "Models per half");
  reg.Add(stability, "--k", "stability.k", &s.stability_k, "Top-k overlap size");
  reg.Add(stability, "--privinf-targets", "stability.privinf_targets", &s.stability_targets,
          "Highest-asr targets whose privinf candidates are compared");
  reg.Add(stability, "--privinf-k", "stability.privinf_k", &s.stability_candidates,
          "Top privinf candidates compared per target");
  CLI::App* report = app.add_subcommand("report", "Rebuild an onion run's file set");
  reg.Add(report, "--run", "report.run", &s.run_dir, "Onion run directory (default: --out)");
  reg.Add(report, "--listing-k", "report.listing_k", &s.listing_k,
          "Easiest/hardest examples to list");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "onion_audit: " << e.what() << "\n\n" << app.help();
    return kExitConfigError;
  }

  if (!s.config_path.empty()) {
    auto file = ConfigFile::Load(s.config_path);
    absl::Status st = file.ok() ? reg.ApplyFile(*file) : file.status();
    if (!st.ok()) {
      err << "onion_audit: " << st.message() << "\n";
      return ExitCodeFor(st);
    }
  }

  CLI::App* chosen = app.get_subcommands().front();
  RunContext run(s, chosen->get_name(), err);
  json summary;
  absl::Status status = run.Prepare();
  if (status.ok()) {
    absl::StatusOr<TrainConfig> tc = MakeTrainConfig(s);
    if (!tc.ok()) {
      status = tc.status();
    } else if (chosen == gen) {
      status = CmdGenData(run, summary);
    } else if (chosen == train) {
      status = CmdTrainShadows(run, *tc, summary);
    } else if (chosen == audit) {
      status = CmdAudit(run, summary);
    } else if (chosen == onion) {
      status = CmdOnion(run, *tc, summary);
    } else if (chosen == privinf) {
      status = CmdPrivInf(run, *tc, summary);
    } else if (chosen == unlearn) {
      status = CmdUnlearnSim(run, *tc, summary);
    } else if (chosen == stability) {
      status = CmdStability(run, *tc, summary);
    } else if (chosen == report) {
      status = CmdReport(run, summary);
    }
  }
  if (status.ok()) status = run.Finish(reg.Resolved());
  if (!status.ok()) {
    err << "onion_audit: error: " << status.message() << "\n";
    return ExitCodeFor(status);
  }
  if (s.json) out << summary.dump(2) << "\n";
  return kExitOk;
}

}  // namespace onion_audit
