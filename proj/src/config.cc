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

#include "onion_audit/config.h"

#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "absl/strings/ascii.h"
#include "absl/strings/numbers.h"
#include "absl/strings/str_cat.h"
#include "onion_audit/io.h"

namespace onion_audit {
namespace {

absl::Status BadValue(absl::string_view key, const std::string& value,
                      absl::string_view expected) {
  return absl::InvalidArgumentError(
      absl::StrCat(key, ": expected ", expected, ", got '", value, "'"));
}

}  // namespace

absl::StatusOr<ConfigFile> ConfigFile::Parse(absl::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    return absl::InvalidArgumentError(
        absl::StrCat("config line ", e.line(), ": ", e.message()));
  }
  ConfigFile file;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      file.values_[name] = node.data();
      continue;
    }
    for (const auto& [key, leaf] : node) {
      file.values_[absl::StrCat(name, ".", key)] = leaf.data();
    }
  }
  return file;
}

absl::StatusOr<ConfigFile> ConfigFile::Load(const std::string& path) {
  auto text = ReadFile(path);
  if (!text.ok()) {
    return absl::InvalidArgumentError(absl::StrCat("config file: ", text.status().message()));
  }
  return Parse(*text);
}

std::optional<std::string> ConfigFile::Get(absl::string_view key) const {
  auto it = values_.find(std::string(key));
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

absl::StatusOr<std::optional<int64_t>> GetInt(const ConfigFile& file, absl::string_view key) {
  auto value = file.Get(key);
  if (!value) return std::optional<int64_t>();
  int64_t out = 0;
  if (!absl::SimpleAtoi(*value, &out)) return BadValue(key, *value, "an integer");
  return std::optional<int64_t>(out);
}

absl::StatusOr<std::optional<double>> GetDouble(const ConfigFile& file, absl::string_view key) {
  auto value = file.Get(key);
  if (!value) return std::optional<double>();
  double out = 0.0;
  if (!absl::SimpleAtod(*value, &out)) return BadValue(key, *value, "a number");
  return std::optional<double>(out);
}

absl::StatusOr<std::optional<bool>> GetBool(const ConfigFile& file, absl::string_view key) {
  auto value = file.Get(key);
  if (!value) return std::optional<bool>();
  bool out = false;
  if (!absl::SimpleAtob(*value, &out)) return BadValue(key, *value, "true or false");
  return std::optional<bool>(out);
}

}  // namespace onion_audit
