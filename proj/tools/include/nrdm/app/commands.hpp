/* Copyright 2026 The NRDM Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/


#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nrdm::app {

/// Exit codes shared by every command.
enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kNumerical = 3 };

struct CliOptions {
  std::string command;
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::int64_t> seed;
  int jobs = 1;
  std::string out;
  // sample / sensitivity
  std::string checkpoint;
  std::optional<std::int64_t> n;
  std::string solver;
  std::optional<std::int64_t> steps;
};

struct CommandResult {
  int exit_code = kOk;
  /// Empty when the command failed before creating one.
  std::filesystem::path run_dir;
};

/// Runs one command. Progress goes to `out`, errors to `err`.
CommandResult execute(const CliOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv and runs the command; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nrdm::app
