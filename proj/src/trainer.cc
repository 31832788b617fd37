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

#include "onion_audit/trainer.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <boost/random/normal_distribution.hpp>

#include "absl/strings/str_cat.h"
#include "onion_audit/io.h"
#include "onion_audit/seeding.h"

namespace onion_audit {
namespace {

constexpr char kModelMagic[4] = {'O', 'A', 'M', 'D'};
constexpr uint32_t kModelFormatVersion = 1;

// Offsets of each parameter block inside Model::params.
struct Layout {
  size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, total = 0;
};

Layout LayoutOf(Arch arch, int dim, int num_classes, int hidden) {
  const auto d = static_cast<size_t>(dim);
  const auto k = static_cast<size_t>(num_classes);
  const auto h = static_cast<size_t>(hidden);
  Layout l;
  switch (arch) {
    case Arch::kLogReg:
      l.b1 = k * d;
      l.total = k * d + k;
      break;
    case Arch::kMlp:
      l.b1 = h * d;
      l.w2 = l.b1 + h;
      l.b2 = l.w2 + k * h;
      l.total = l.b2 + k;
      break;
    case Arch::kLinearSvm:
      l.b1 = d;
      l.total = d + 1;
      break;
  }
  return l;
}

bool IsWeight(const Model& m, const Layout& l, size_t i) {
  switch (m.arch) {
    case Arch::kLogReg:
      return i < l.b1;
    case Arch::kMlp:
      return i < l.b1 || (i >= l.w2 && i < l.b2);
    case Arch::kLinearSvm:
      return i < l.b1;
  }
  return false;
}

double SvmLambda(const TrainConfig& config, size_t n_members) {
  return 1.0 / (config.svm_c * static_cast<double>(n_members));
}

// Adds the data term of the objective over `rows` (averaged by `scale`) to
// `grad` and returns its value. Regularization is added by the caller.
double AccumulateDataTerm(const Model& m, const Layout& l, const Dataset& ds,
                          std::span<const size_t> rows, double scale,
                          std::span<double> grad, std::vector<double>& work) {
  const auto d = static_cast<size_t>(m.dim);
  const auto k = static_cast<size_t>(m.num_classes);
  const auto h = static_cast<size_t>(m.hidden_width);
  const double* p = m.params.data();
  double total = 0.0;

  if (m.arch == Arch::kLinearSvm) {
    for (size_t r : rows) {
      const Example& e = ds[r];
      const double y = e.label == 1 ? 1.0 : -1.0;
      double s = p[l.b1];
      for (size_t j = 0; j < d; ++j) s += p[j] * e.features[j];
      const double slack = 1.0 - y * s;
      if (slack > 0) {
        total += slack;
        for (size_t j = 0; j < d; ++j) grad[j] -= scale * y * e.features[j];
        grad[l.b1] -= scale * y;
      }
    }
    return scale * total;
  }

  work.resize(2 * h + 2 * k);
  double* hidden = work.data();
  double* act = hidden + h;
  double* logits = act + h;
  double* g = logits + k;
  for (size_t r : rows) {
    const Example& e = ds[r];
    const double* x = e.features.data();
    const double* in = x;
    size_t in_dim = d;
    const double* w_out = p;
    const double* b_out = p + l.b1;
    if (m.arch == Arch::kMlp) {
      for (size_t u = 0; u < h; ++u) {
        double s = p[l.b1 + u];
        const double* row = p + u * d;
        for (size_t j = 0; j < d; ++j) s += row[j] * x[j];
        hidden[u] = s;
        act[u] = s > 0 ? s : 0.0;
      }
      in = act;
      in_dim = h;
      w_out = p + l.w2;
      b_out = p + l.b2;
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < k; ++c) {
      double s = b_out[c];
      const double* row = w_out + c * in_dim;
      for (size_t j = 0; j < in_dim; ++j) s += row[j] * in[j];
      logits[c] = s;
      max_logit = std::max(max_logit, s);
    }
    double norm = 0.0;
    for (size_t c = 0; c < k; ++c) {
      g[c] = std::exp(logits[c] - max_logit);
      norm += g[c];
    }
    const auto y = static_cast<size_t>(e.label);
    total += std::log(norm) + max_logit - logits[y];
    for (size_t c = 0; c < k; ++c) g[c] = scale * (g[c] / norm - (c == y ? 1.0 : 0.0));

    const size_t w_off = m.arch == Arch::kMlp ? l.w2 : 0;
    const size_t b_off = m.arch == Arch::kMlp ? l.b2 : l.b1;
    for (size_t c = 0; c < k; ++c) {
      double* grow = grad.data() + w_off + c * in_dim;
      for (size_t j = 0; j < in_dim; ++j) grow[j] += g[c] * in[j];
      grad[b_off + c] += g[c];
    }
    if (m.arch == Arch::kMlp) {
      for (size_t u = 0; u < h; ++u) {
        if (hidden[u] <= 0) continue;
        double back = 0.0;
        for (size_t c = 0; c < k; ++c) back += p[l.w2 + c * h + u] * g[c];
        double* grow = grad.data() + u * d;
        for (size_t j = 0; j < d; ++j) grow[j] += back * x[j];
        grad[l.b1 + u] += back;
      }
    }
  }
  return scale * total;
}

// Objective over `rows` with regularization strength `reg` applied to weight
// entries; gradient overwritten into `grad`.
double Objective(const Model& m, const Layout& l, const Dataset& ds,
                 std::span<const size_t> rows, double reg,
                 std::span<double> grad, std::vector<double>& work) {
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = AccumulateDataTerm(m, l, ds, rows,
                                   1.0 / static_cast<double>(rows.size()), grad,
                                   work);
  if (reg > 0) {
    double sq = 0.0;
    for (size_t i = 0; i < m.params.size(); ++i) {
      if (!IsWeight(m, l, i)) continue;
      sq += m.params[i] * m.params[i];
      grad[i] += reg * m.params[i];
    }
    loss += 0.5 * reg * sq;
  }
  return loss;
}

absl::StatusOr<std::vector<size_t>> MemberRows(const Dataset& ds,
                                               const IdSet& members) {
  if (members.empty()) {
    return absl::InvalidArgumentError("members: training set is empty");
  }
  std::vector<size_t> rows;
  rows.reserve(members.size());
  for (ExampleId id : members) {
    auto idx = ds.IndexOf(id);
    if (!idx) {
      return absl::InvalidArgumentError(
          absl::StrCat("members: id ", id, " is not in the dataset"));
    }
    rows.push_back(*idx);
  }
  return rows;
}

// Shared SGD loop. `reg` is the regularization strength on weights.
absl::StatusOr<Model> RunSgd(Model model, const Dataset& ds,
                             std::vector<size_t> rows, const TrainConfig& config,
                             double reg, TrainStats* stats) {
  const Layout l = LayoutOf(model.arch, model.dim, model.num_classes,
                            model.hidden_width);
  Rng shuffle_rng(DeriveSeed(config.seed, "shuffle"));
  const size_t batch = static_cast<size_t>(config.batch_size);
  const size_t steps_per_epoch = (rows.size() + batch - 1) / batch;
  const double total_steps =
      static_cast<double>(steps_per_epoch) * static_cast<double>(config.epochs);
  std::vector<double> grad(model.params.size());
  std::vector<double> work;
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  size_t step = 0;
  if (stats) stats->epoch_losses.clear();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Shuffle(rows, shuffle_rng);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < rows.size(); start += batch, ++step) {
      const size_t end = std::min(rows.size(), start + batch);
      const double loss =
          Objective(model, l, ds, std::span<const size_t>(rows).subspan(start, end - start),
                    reg, grad, work);
      if (!std::isfinite(loss)) {
        return absl::AbortedError(absl::StrCat(
            "training diverged at epoch ", epoch, "; last finite loss ",
            FormatDouble(last_finite)));
      }
      last_finite = loss;
      epoch_loss += loss;
      const double lr =
          config.lr * (1.0 - static_cast<double>(step) / total_steps);
      for (size_t i = 0; i < grad.size(); ++i) model.params[i] -= lr * grad[i];
    }
    if (stats) {
      stats->epoch_losses.push_back(epoch_loss /
                                    static_cast<double>(steps_per_epoch));
    }
  }
  for (double v : model.params) {
    if (!std::isfinite(v)) {
      return absl::AbortedError(absl::StrCat(
          "training diverged: non-finite parameter; last finite loss ",
          FormatDouble(last_finite)));
    }
  }
  return model;
}

void PutU32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutU64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
uint64_t GetLe(absl::string_view bytes, size_t& pos, int width) {
  uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<uint64_t>(static_cast<uint8_t>(bytes[pos + i])) << (8 * i);
  }
  pos += static_cast<size_t>(width);
  return v;
}

}  // namespace

std::string ArchName(Arch arch) {
  switch (arch) {
    case Arch::kLogReg:
      return "logreg";
    case Arch::kMlp:
      return "mlp";
    case Arch::kLinearSvm:
      return "linear_svm";
  }
  return "unknown";
}

absl::StatusOr<Arch> ParseArch(absl::string_view name) {
  if (name == "logreg") return Arch::kLogReg;
  if (name == "mlp") return Arch::kMlp;
  if (name == "linear_svm" || name == "svm") return Arch::kLinearSvm;
  return absl::InvalidArgumentError(absl::StrCat("arch: unknown '", name, "'"));
}

absl::Status TrainConfig::Validate() const {
  if (epochs < 1) return absl::InvalidArgumentError("epochs: must be >= 1");
  if (batch_size < 1) return absl::InvalidArgumentError("batch_size: must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) {
    return absl::InvalidArgumentError("lr: must be a positive finite number");
  }
  if (!(weight_decay >= 0)) {
    return absl::InvalidArgumentError("weight_decay: must be >= 0");
  }
  if (arch == Arch::kMlp && hidden_width < 1) {
    return absl::InvalidArgumentError("hidden_width: must be >= 1");
  }
  if (arch == Arch::kLinearSvm && !(svm_c > 0)) {
    return absl::InvalidArgumentError("svm_c: must be > 0");
  }
  return absl::OkStatus();
}

std::string TrainConfig::Canonical() const {
  return absl::StrCat("arch=", ArchName(arch), ";hidden_width=", hidden_width,
                      ";svm_c=", FormatDouble(svm_c), ";epochs=", epochs,
                      ";lr=", FormatDouble(lr), ";batch_size=", batch_size,
                      ";weight_decay=", FormatDouble(weight_decay),
                      ";seed=", seed);
}

uint64_t TrainConfig::ConfigHash() const { return Mix64(HashLabel(Canonical())); }

size_t Model::ParamCount(Arch arch, int dim, int num_classes, int hidden) {
  return LayoutOf(arch, dim, num_classes, hidden).total;
}

Model Model::Zeros(Arch arch, int dim, int num_classes, int hidden) {
  Model m;
  m.arch = arch;
  m.dim = dim;
  m.num_classes = arch == Arch::kLinearSvm ? 2 : num_classes;
  m.hidden_width = arch == Arch::kMlp ? hidden : 0;
  m.params.assign(ParamCount(arch, dim, m.num_classes, m.hidden_width), 0.0);
  return m;
}

uint64_t MembersFingerprint(std::span<const ExampleId> sorted_ids) {
  uint64_t h = Mix64(sorted_ids.size());
  for (ExampleId id : sorted_ids) h = Mix64(h ^ Mix64(id));
  return h;
}

absl::StatusOr<Model> Train(const Dataset& ds, const IdSet& members,
                            const TrainConfig& config, TrainStats* stats) {
  if (auto s = config.Validate(); !s.ok()) return s;
  if (config.arch == Arch::kLinearSvm) return TrainSvm(ds, members, config, stats);
  auto rows = MemberRows(ds, members);
  if (!rows.ok()) return rows.status();

  Model model = Model::Zeros(config.arch, ds.dim(), ds.num_classes(),
                             config.hidden_width);
  model.config_hash = config.ConfigHash();
  const std::vector<ExampleId> ids(members.begin(), members.end());
  model.fingerprint = MembersFingerprint(ids);
  if (config.arch == Arch::kMlp) {
    // He initialization for the ReLU layer, Glorot-style scale for the output.
    const Layout l = LayoutOf(model.arch, model.dim, model.num_classes,
                              model.hidden_width);
    Rng init_rng(DeriveSeed(config.seed, "init"));
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    const double s1 = std::sqrt(2.0 / model.dim);
    const double s2 = std::sqrt(1.0 / model.hidden_width);
    for (size_t i = 0; i < l.b1; ++i) model.params[i] = s1 * normal(init_rng);
    for (size_t i = l.w2; i < l.b2; ++i) model.params[i] = s2 * normal(init_rng);
  }
  return RunSgd(std::move(model), ds, *std::move(rows), config,
                config.weight_decay, stats);
}

absl::StatusOr<Model> TrainSvm(const Dataset& ds, const IdSet& members,
                               const TrainConfig& config, TrainStats* stats) {
  if (ds.num_classes() != 2) {
    return absl::InvalidArgumentError(absl::StrCat(
        "num_classes: linear SVM needs a binary task, got ", ds.num_classes()));
  }
  TrainConfig svm_config = config;
  svm_config.arch = Arch::kLinearSvm;
  if (auto s = svm_config.Validate(); !s.ok()) return s;
  auto rows = MemberRows(ds, members);
  if (!rows.ok()) return rows.status();

  Model model = Model::Zeros(Arch::kLinearSvm, ds.dim(), 2);
  model.config_hash = svm_config.ConfigHash();
  const std::vector<ExampleId> ids(members.begin(), members.end());
  model.fingerprint = MembersFingerprint(ids);
  const double lambda = SvmLambda(svm_config, rows->size());
  return RunSgd(std::move(model), ds, *std::move(rows), svm_config, lambda, stats);
}

void ForwardUnchecked(const Model& model, std::span<const double> features,
                      std::span<double> logits) {
  const auto d = static_cast<size_t>(model.dim);
  const auto k = static_cast<size_t>(model.num_classes);
  const Layout l = LayoutOf(model.arch, model.dim, model.num_classes,
                            model.hidden_width);
  const double* p = model.params.data();
  switch (model.arch) {
    case Arch::kLogReg:
      for (size_t c = 0; c < k; ++c) {
        double s = p[l.b1 + c];
        for (size_t j = 0; j < d; ++j) s += p[c * d + j] * features[j];
        logits[c] = s;
      }
      break;
    case Arch::kMlp: {
      const auto h = static_cast<size_t>(model.hidden_width);
      for (size_t c = 0; c < k; ++c) logits[c] = p[l.b2 + c];
      for (size_t u = 0; u < h; ++u) {
        double s = p[l.b1 + u];
        for (size_t j = 0; j < d; ++j) s += p[u * d + j] * features[j];
        if (s <= 0) continue;
        for (size_t c = 0; c < k; ++c) logits[c] += p[l.w2 + c * h + u] * s;
      }
      break;
    }
    case Arch::kLinearSvm: {
      double s = p[l.b1];
      for (size_t j = 0; j < d; ++j) s += p[j] * features[j];
      logits[0] = 0.0;
      logits[1] = s;
      break;
    }
  }
}

absl::StatusOr<std::vector<double>> PredictLogits(
    const Model& model, std::span<const double> features) {
  if (features.size() != static_cast<size_t>(model.dim)) {
    return absl::InvalidArgumentError(
        absl::StrCat("shape mismatch: model expects ", model.dim,
                     " features, got ", features.size()));
  }
  std::vector<double> logits(static_cast<size_t>(model.num_classes));
  ForwardUnchecked(model, features, logits);
  return logits;
}

absl::StatusOr<double> LogitGap(std::span<const double> logits) {
  if (logits.size() < 2) {
    return absl::InvalidArgumentError(
        absl::StrCat("shape mismatch: logit gap needs >= 2 logits, got ",
                     logits.size()));
  }
  double top = -std::numeric_limits<double>::infinity();
  double second = top;
  for (double v : logits) {
    if (v > top) {
      second = top;
      top = v;
    } else if (v > second) {
      second = v;
    }
  }
  return top - second;
}

absl::StatusOr<IdSet> SupportVectors(const Model& model, const Dataset& ds,
                                     const IdSet& members, double margin_tol) {
  if (model.arch != Arch::kLinearSvm) {
    return absl::InvalidArgumentError(absl::StrCat(
        "arch: support vectors need a linear_svm model, got ", ArchName(model.arch)));
  }
  if (model.dim != ds.dim()) {
    return absl::InvalidArgumentError("shape mismatch: model/dataset dimension");
  }
  auto rows = MemberRows(ds, members);
  if (!rows.ok()) return rows.status();
  IdSet out;
  std::vector<double> logits(2);
  for (size_t r : *rows) {
    const Example& e = ds[r];
    ForwardUnchecked(model, e.features, logits);
    const double y = e.label == 1 ? 1.0 : -1.0;
    if (y * logits[1] <= 1.0 + margin_tol) out.insert(e.id);
  }
  return out;
}

LossAndGradient EvaluateObjective(const Model& model, const Dataset& ds,
                                  std::span<const size_t> rows,
                                  const TrainConfig& config) {
  const Layout l = LayoutOf(model.arch, model.dim, model.num_classes,
                            model.hidden_width);
  const double reg = model.arch == Arch::kLinearSvm
                         ? SvmLambda(config, rows.size())
                         : config.weight_decay;
  LossAndGradient out;
  out.gradient.resize(model.params.size());
  std::vector<double> work;
  out.loss = Objective(model, l, ds, rows, reg, out.gradient, work);
  return out;
}

std::string SerializeModel(const Model& model) {
  std::string out(kModelMagic, 4);
  PutU32(out, kModelFormatVersion);
  PutU32(out, static_cast<uint32_t>(model.arch));
  PutU32(out, static_cast<uint32_t>(model.dim));
  PutU32(out, static_cast<uint32_t>(model.num_classes));
  PutU32(out, static_cast<uint32_t>(model.hidden_width));
  PutU64(out, model.config_hash);
  PutU64(out, model.fingerprint);
  PutU64(out, model.params.size());
  for (double v : model.params) PutU64(out, std::bit_cast<uint64_t>(v));
  return out;
}

absl::StatusOr<Model> ParseModel(absl::string_view bytes) {
  constexpr size_t kHeader = 4 + 5 * 4 + 3 * 8;
  if (bytes.size() < kHeader || bytes.substr(0, 4) != absl::string_view(kModelMagic, 4)) {
    return absl::DataLossError("not a model file");
  }
  size_t pos = 4;
  const auto version = static_cast<uint32_t>(GetLe(bytes, pos, 4));
  if (version != kModelFormatVersion) {
    return absl::DataLossError(absl::StrCat("unsupported model version ", version));
  }
  Model m;
  const auto arch = static_cast<uint32_t>(GetLe(bytes, pos, 4));
  if (arch > static_cast<uint32_t>(Arch::kLinearSvm)) {
    return absl::DataLossError("unknown arch tag");
  }
  m.arch = static_cast<Arch>(arch);
  m.dim = static_cast<int>(GetLe(bytes, pos, 4));
  m.num_classes = static_cast<int>(GetLe(bytes, pos, 4));
  m.hidden_width = static_cast<int>(GetLe(bytes, pos, 4));
  m.config_hash = GetLe(bytes, pos, 8);
  m.fingerprint = GetLe(bytes, pos, 8);
  const uint64_t count = GetLe(bytes, pos, 8);
  if (count != Model::ParamCount(m.arch, m.dim, m.num_classes, m.hidden_width) ||
      bytes.size() != kHeader + 8 * count) {
    return absl::DataLossError("model parameter block has the wrong size");
  }
  m.params.resize(count);
  for (double& v : m.params) v = std::bit_cast<double>(GetLe(bytes, pos, 8));
  return m;
}

}  // namespace onion_audit
