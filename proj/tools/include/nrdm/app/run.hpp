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
#include <string>
#include <string_view>
#include <vector>

#include "nrdm/csv.hpp"

namespace nrdm::app {

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

/// Writes via a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// UTC time as 20261018T142530Z.
std::string timestamp_compact();
/// UTC time as 2026-10-18T14:25:30Z.
std::string timestamp_iso();

/**
 * Output directory of one command invocation, `<root>/<command>-<time>-s<seed>`
 * (with a numeric suffix when the name is taken). Files are registered as
 * they are written; finish() hashes them and writes manifest.json last.
 */
class RunDir {
 public:
  RunDir(const std::filesystem::path& root, std::string command, std::uint64_t seed, std::string config_toml);

  const std::filesystem::path& path() const noexcept { return path_; }

  /// Writes a file relative to the run directory and records it.
  std::filesystem::path write(const std::string& name, std::string_view bytes);
  std::filesystem::path write_csv(const std::string& name, const CsvTable& table);
  /// Records a file written by other means.
  void add(const std::string& name);

  /// Writes manifest.json. The directory is not touched afterwards.
  void finish();

 private:
  std::filesystem::path path_;
  std::string command_;
  std::uint64_t seed_;
  std::string config_;
  std::string started_;
  std::vector<std::string> files_;
};

/// Output root: --out, else $NRDM_OUT_ROOT, else ./runs.
std::filesystem::path output_root(const std::string& flag);

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static line chart; a pure function of its inputs.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<SvgSeries>& series, bool log_y = false);

/// One series per distinct value of `group_col` (or one series when empty).
std::string svg_from_csv(const CsvTable& table, const std::string& x_col, const std::string& y_col,
                         const std::string& group_col, const std::string& title, bool log_y = false);

}  // namespace nrdm::app
