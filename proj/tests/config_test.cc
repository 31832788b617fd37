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

#include "absl/status/status.h"
#include "gmock/gmock.h"
#include "gtest/gtest.h"

namespace onion_audit {
namespace {

using ::testing::HasSubstr;
using ::testing::Optional;

TEST(ConfigFileTest, SectionsBecomeDottedKeys) {
  auto file = ConfigFile::Parse(
      "; comment\n"
      "[data]\n"
      "n = 500\n"
      "class_sep = 2.5\n"
      "[run]\n"
      "resume = true\n");
  ASSERT_TRUE(file.ok()) << file.status();
  EXPECT_EQ(file->values().size(), 3u);
  EXPECT_THAT(file->Get("data.n"), Optional(std::string("500")));
  EXPECT_EQ(file->Get("n"), std::nullopt);
  EXPECT_THAT(*GetInt(*file, "data.n"), Optional(500));
  EXPECT_THAT(*GetDouble(*file, "data.class_sep"), Optional(2.5));
  EXPECT_THAT(*GetBool(*file, "run.resume"), Optional(true));
  EXPECT_EQ(*GetInt(*file, "data.dim"), std::nullopt);
}

TEST(ConfigFileTest, BadValuesNameTheKey) {
  auto file = ConfigFile::Parse("[data]\nn = many\n");
  ASSERT_TRUE(file.ok());
  const auto status = GetInt(*file, "data.n").status();
  EXPECT_EQ(status.code(), absl::StatusCode::kInvalidArgument);
  EXPECT_THAT(status.message(), HasSubstr("data.n"));
  EXPECT_FALSE(GetDouble(*file, "data.n").ok());
  EXPECT_FALSE(GetBool(*file, "data.n").ok());
}

TEST(ConfigFileTest, SyntaxErrorsReportTheLine) {
  const auto status = ConfigFile::Parse("[data]\nn = 1\n[broken\n").status();
  EXPECT_EQ(status.code(), absl::StatusCode::kInvalidArgument);
  EXPECT_THAT(status.message(), HasSubstr("line 3"));
}

TEST(ConfigFileTest, MissingFile) {
  EXPECT_EQ(ConfigFile::Load("/nonexistent/run.ini").status().code(),
            absl::StatusCode::kInvalidArgument);
}

}  // namespace
}  // namespace onion_audit
