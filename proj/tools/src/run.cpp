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


#include "nrdm/app/run.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "nrdm/version.hpp"

namespace nrdm::app {

namespace fs = std::filesystem;

namespace {

std::string hex(const unsigned char* data, unsigned int len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kDigits[data[i] >> 4];
    out += kDigits[data[i] & 15];
  }
  return out;
}

class Digest {
 public:
  Digest() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  ~Digest() { EVP_MD_CTX_free(ctx_); }
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw std::runtime_error("sha256 update failed");
  }
  std::string hex_digest() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw std::runtime_error("sha256 final failed");
    return hex(md, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::tm utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  return tm;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex_digest();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Digest d;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return d.hex_digest();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string timestamp_compact() {
  const std::tm tm = utc_now();
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::string timestamp_iso() {
  const std::tm tm = utc_now();
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("NRDM_OUT_ROOT"); env && *env) return env;
  return "runs";
}

RunDir::RunDir(const fs::path& root, std::string command, std::uint64_t seed, std::string config_toml)
    : command_(std::move(command)), seed_(seed), config_(std::move(config_toml)), started_(timestamp_iso()) {
  fs::create_directories(root);
  const std::string base = command_ + "-" + timestamp_compact() + "-s" + std::to_string(seed);
  // create_directory reports whether it made the directory, so concurrent
  // runs never share one.
  for (int n = 0;; ++n) {
    fs::path candidate = root / (n == 0 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(candidate)) {
      path_ = std::move(candidate);
      break;
    }
  }
}

fs::path RunDir::write(const std::string& name, std::string_view bytes) {
  const fs::path p = path_ / name;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, bytes);
  add(name);
  return p;
}

fs::path RunDir::write_csv(const std::string& name, const CsvTable& table) { return write(name, table.to_string()); }

void RunDir::add(const std::string& name) {
  if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
}

void RunDir::finish() {
  nlohmann::ordered_json manifest;
  manifest["command"] = command_;
  manifest["artifact_version"] = kVersionString;
  manifest["seed"] = seed_;
  manifest["started"] = started_;
  manifest["finished"] = timestamp_iso();
  manifest["config"] = config_;
  auto files = nlohmann::ordered_json::array();
  std::vector<std::string> sorted = files_;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& name : sorted) {
    const fs::path p = path_ / name;
    files.push_back({{"path", name}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
  }
  manifest["files"] = std::move(files);
  write_file_atomic(path_ / "manifest.json", manifest.dump(2) + "\n");
}

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<SvgSeries>& series, bool log_y) {
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;

  auto ty = [&](double y) { return log_y ? std::log10(std::max(y, 1e-300)) : y; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (log_y && s.y[i] <= 0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return kTop + ph - (ty(y) - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
    << " " << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << px(kW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
    << "</text>\n";
  o << "<rect x=\"" << px(kLeft) << "\" y=\"" << px(kTop) << "\" width=\"" << px(pw) << "\" height=\"" << px(ph)
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    const double gx = kLeft + pw * i / 4.0, gy = kTop + ph - ph * i / 4.0;
    o << "<line x1=\"" << px(gx) << "\" y1=\"" << px(kTop) << "\" x2=\"" << px(gx) << "\" y2=\"" << px(kTop + ph)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<line x1=\"" << px(kLeft) << "\" y1=\"" << px(gy) << "\" x2=\"" << px(kLeft + pw) << "\" y2=\"" << px(gy)
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << px(gx) << "\" y=\"" << px(kTop + ph + 16) << "\" text-anchor=\"middle\">" << fmt(fx)
      << "</text>\n";
    o << "<text x=\"" << px(kLeft - 6) << "\" y=\"" << px(gy + 4) << "\" text-anchor=\"end\">"
      << fmt(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  o << "<text x=\"" << px(kLeft + pw / 2) << "\" y=\"" << px(kH - 10) << "\" text-anchor=\"middle\">"
    << escape_xml(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << px(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << px(kTop + ph / 2) << ")\">" << escape_xml(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % kPalette.size()];
    std::string points;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (log_y && s.y[i] <= 0)) continue;
      points += (points.empty() ? "" : " ") + px(sx(s.x[i])) + "," + px(sy(s.y[i]));
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"" << points << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << px(kLeft + pw + 12) << "\" y1=\"" << px(ly) << "\" x2=\"" << px(kLeft + pw + 32)
      << "\" y2=\"" << px(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << px(kLeft + pw + 38) << "\" y=\"" << px(ly + 4) << "\">" << escape_xml(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_from_csv(const CsvTable& table, const std::string& x_col, const std::string& y_col,
                         const std::string& group_col, const std::string& title, bool log_y) {
  const std::size_t xi = table.column(x_col), yi = table.column(y_col);
  std::vector<SvgSeries> series;
  std::map<std::string, std::size_t> index;
  for (const auto& row : table.rows) {
    const std::string key = group_col.empty() ? y_col : group_col + "=" + row[table.column(group_col)];
    auto [it, inserted] = index.try_emplace(key, series.size());
    if (inserted) series.push_back({key, {}, {}});
    series[it->second].x.push_back(parse_double(row[xi], x_col));
    series[it->second].y.push_back(parse_double(row[yi], y_col));
  }
  return svg_line_chart(title, x_col, y_col, series, log_y);
}

}  // namespace nrdm::app
