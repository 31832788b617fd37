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

// Experiment config files: INI-style key = value lines grouped under
// [section] headers. Keys are addressed as "section.key".

#ifndef ONION_AUDIT_CONFIG_H_
#define ONION_AUDIT_CONFIG_H_

#include <map>
#include <optional>
#include <string>

#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"

namespace onion_audit {

class ConfigFile {
 public:
  ConfigFile() = default;

  static absl::StatusOr<ConfigFile> Parse(absl::string_view text);
  static absl::StatusOr<ConfigFile> Load(const std::string& path);

  std::optional<std::string> Get(absl::string_view key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Typed lookups. A missing key yields nullopt; a malformed value is an
// InvalidArgument error naming the key.
absl::StatusOr<std::optional<int64_t>> GetInt(const ConfigFile& file, absl::string_view key);
absl::StatusOr<std::optional<double>> GetDouble(const ConfigFile& file, absl::string_view key);
absl::StatusOr<std::optional<bool>> GetBool(const ConfigFile& file, absl::string_view key);

}  // namespace onion_audit

#endif  // ONION_AUDIT_CONFIG_H_
