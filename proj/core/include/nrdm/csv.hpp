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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nrdm {

/// A comma-separated table of raw cells. No quoting: cells never contain
/// commas or newlines in the files this project reads and writes.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws std::invalid_argument if missing.
  std::size_t column(std::string_view name) const;
  std::string to_string() const;
};

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);
/// Strict parse of a whole cell; throws std::invalid_argument naming `context`.
double parse_double(std::string_view cell, std::string_view context);

CsvTable parse_csv(std::string_view text, std::string_view context);
CsvTable read_csv(const std::filesystem::path& path);
/// Writes `table`; parent directories must exist.
void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace nrdm
