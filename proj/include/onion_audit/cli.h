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

// The onion_audit command line: dataset generation, shadow training, audits
// and every removal experiment, each writing a run directory with a
// manifest of content hashes.

#ifndef ONION_AUDIT_CLI_H_
#define ONION_AUDIT_CLI_H_

#include <ostream>
#include <string>
#include <vector>

#include "absl/status/status.h"

namespace onion_audit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitInternalError = 4;

inline constexpr char kToolVersion[] = "1.0.0";

// InvalidArgument/OutOfRange -> 2; NotFound, FailedPrecondition, DataLoss,
// Aborted -> 3; everything else -> 4.
int ExitCodeFor(const absl::Status& status);

// args[0] is the program name. Results go to `out`; progress lines and
// errors go to `err`.
int CliMain(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace onion_audit

#endif  // ONION_AUDIT_CLI_H_
