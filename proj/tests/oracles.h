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

// Brute-force reference implementations shared by the unit tests and the
// acceptance suite. Deliberately naive: every quantity is recomputed from its
// definition with no reuse between cells.

#ifndef ONION_AUDIT_TESTS_ORACLES_H_
#define ONION_AUDIT_TESTS_ORACLES_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "onion_audit/dataset.h"
#include "onion_audit/lira.h"
#include "onion_audit/seeding.h"
#include "onion_audit/shadow.h"

namespace onion_audit::oracle {

inline double LogNormalPdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * std::log(2.0 * M_PI) - std::log(sigma) - 0.5 * z * z;
}

// Mean and clamped unbiased standard deviation, two passes.
inline std::pair<double, double> MeanStd(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {mean, std::max(sd, kSigmaFloor)};
}

// Whether the attack on (model m, column e) is correct, with row m held out
// of the fit.
inline bool LooCorrect(const ObservationMatrix& obs, size_t m, size_t e) {
  std::vector<double> in, out;
  for (size_t r = 0; r < obs.n_models(); ++r) {
    if (r == m) continue;
    (obs.membership.included(r, e) ? in : out).push_back(obs.gap(r, e));
  }
  const auto [mu_in, sd_in] = MeanStd(in);
  const auto [mu_out, sd_out] = MeanStd(out);
  const double x = obs.gap(m, e);
  const double llr = LogNormalPdf(x, mu_in, sd_in) - LogNormalPdf(x, mu_out, sd_out);
  return (llr > 0) == obs.membership.included(m, e);
}

// asr per column by exhaustive enumeration of held-out rows.
inline std::vector<double> BruteForceAsr(const ObservationMatrix& obs) {
  std::vector<double> out(obs.n_examples());
  for (size_t e = 0; e < obs.n_examples(); ++e) {
    size_t hits = 0;
    for (size_t m = 0; m < obs.n_models(); ++m) hits += LooCorrect(obs, m, e);
    out[e] = static_cast<double>(hits) / static_cast<double>(obs.n_models());
  }
  return out;
}

// privinf of every candidate column for one target column; nullopt when the
// candidate is never excluded.
inline std::map<ExampleId, std::optional<double>> BruteForcePrivInf(
    const ObservationMatrix& obs, size_t target) {
  std::map<ExampleId, std::optional<double>> out;
  for (size_t x = 0; x < obs.n_examples(); ++x) {
    if (x == target) continue;
    size_t rows = 0, hits = 0;
    for (size_t m = 0; m < obs.n_models(); ++m) {
      if (obs.membership.included(m, x)) continue;
      ++rows;
      hits += LooCorrect(obs, m, target);
    }
    out[obs.membership.example_ids()[x]] =
        rows == 0 ? std::nullopt
                  : std::optional<double>(static_cast<double>(hits) /
                                          static_cast<double>(rows));
  }
  return out;
}

// (fpr, tpr) at every distinct score, predicting member when score >= t.
inline std::vector<std::pair<double, double>> BruteForceSweep(
    const std::vector<ScoredPair>& pairs) {
  std::set<double> thresholds;
  size_t pos = 0, neg = 0;
  for (const ScoredPair& p : pairs) {
    thresholds.insert(p.score);
    (p.member ? pos : neg)++;
  }
  std::vector<std::pair<double, double>> out = {{0.0, 0.0}};
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    size_t tp = 0, fp = 0;
    for (const ScoredPair& p : pairs) {
      if (p.score >= *it) (p.member ? tp : fp)++;
    }
    out.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return out;
}

// Random observation matrix with at least `min_side` in and out rows per
// column. Gaps are drawn from shifted normals so the attack is informative.
inline ObservationMatrix RandomObservations(size_t n_models, size_t n_examples,
                                            uint64_t seed, size_t min_side = 3) {
  Rng rng(seed);
  std::vector<ExampleId> ids(n_examples);
  for (size_t e = 0; e < n_examples; ++e) ids[e] = 10 * e + 3;
  std::vector<uint8_t> cells(n_models * n_examples);
  for (size_t e = 0; e < n_examples; ++e) {
    size_t n_in = 0;
    do {
      n_in = 0;
      for (size_t m = 0; m < n_models; ++m) {
        cells[m * n_examples + e] = (rng() >> 63) != 0;
        n_in += cells[m * n_examples + e];
      }
    } while (n_in < min_side || n_models - n_in < min_side);
  }
  ObservationMatrix obs;
  obs.membership = MembershipMatrix(ids, n_models, 0.5, seed, cells);
  obs.gaps.resize(n_models * n_examples);
  for (size_t m = 0; m < n_models; ++m) {
    for (size_t e = 0; e < n_examples; ++e) {
      const double u1 = UnitFromBits(rng()) + 1e-12;
      const double u2 = UnitFromBits(rng());
      const double normal = std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * M_PI * u2);
      const double shift = cells[m * n_examples + e] ? 0.5 + 0.02 * (e % 7) : 0.0;
      obs.gaps[m * n_examples + e] = 2.0 + shift + (0.3 + 0.01 * (e % 5)) * normal;
    }
  }
  obs.model_accuracies.assign(n_models, 1.0);
  return obs;
}

// Observation matrix from explicit membership rows and gaps.
inline ObservationMatrix HandBuilt(const std::vector<std::vector<int>>& include,
                            const std::vector<std::vector<double>>& gaps) {
  const size_t n_models = include.size();
  const size_t n_examples = include[0].size();
  std::vector<ExampleId> ids;
  for (size_t e = 0; e < n_examples; ++e) ids.push_back(100 + e);
  std::vector<uint8_t> cells;
  ObservationMatrix obs;
  for (size_t m = 0; m < n_models; ++m) {
    for (size_t e = 0; e < n_examples; ++e) {
      cells.push_back(static_cast<uint8_t>(include[m][e]));
      obs.gaps.push_back(gaps[m][e]);
    }
  }
  obs.membership = MembershipMatrix(ids, n_models, 0.5, 0, cells);
  obs.model_accuracies.assign(n_models, 1.0);
  return obs;
}

// Six models, three columns; each column has three in and three out rows.
inline ObservationMatrix SixByThree() {
  return HandBuilt({{1, 1, 0}, {1, 0, 1}, {1, 0, 0}, {0, 1, 1}, {0, 1, 0}, {0, 0, 1}},
                   {{3.1, 2.2, 0.9},
                    {2.8, 0.7, 1.6},
                    {3.5, 1.1, 0.4},
                    {1.0, 2.9, 1.9},
                    {0.6, 2.4, 0.8},
                    {1.2, 0.9, 2.1}});
}

// Six models, four columns; every candidate column is excluded somewhere.
inline ObservationMatrix SixByFour() {
  return HandBuilt({{1, 1, 0, 1},
                    {1, 0, 1, 0},
                    {1, 0, 0, 1},
                    {0, 1, 1, 0},
                    {0, 1, 0, 1},
                    {0, 0, 1, 0}},
                   {{3.1, 2.2, 0.9, 1.8},
                    {2.8, 0.7, 1.6, 0.6},
                    {3.5, 1.1, 0.4, 2.0},
                    {1.0, 2.9, 1.9, 0.5},
                    {0.6, 2.4, 0.8, 1.7},
                    {1.2, 0.9, 2.1, 0.9}});
}

}  // namespace onion_audit::oracle

#endif  // ONION_AUDIT_TESTS_ORACLES_H_
