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

#ifndef ONION_AUDIT_IO_H_
#define ONION_AUDIT_IO_H_

#include <cstdint>
#include <string>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/string_view.h"

namespace onion_audit {

absl::StatusOr<std::string> ReadFile(const std::string& path);

// Writes to a sibling temporary file and renames it over `path`.
absl::Status WriteFileAtomic(const std::string& path, absl::string_view content);

// Hex SHA-1 of "blob <size>\0" + content, as `git hash-object` computes it.
std::string GitBlobHash(absl::string_view content);

// Shortest decimal form that parses back to the identical double.
std::string FormatDouble(double value);

}  // namespace onion_audit

#endif  // ONION_AUDIT_IO_H_
