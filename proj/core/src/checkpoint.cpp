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

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "nrdm/training.hpp"

namespace nrdm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'N', 'R', 'D', 'M', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos, const std::string& where) {
  if (in.size() < pos + 4) throw CheckpointError(where + ": truncated checkpoint (missing header fields)");
  std::uint32_t v = 0;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

const Tensor& Checkpoint::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw CheckpointError("checkpoint has no tensor '" + std::string(name) + "'");
}

bool Checkpoint::has(std::string_view name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
}

Checkpoint make_checkpoint(const ScoreNetwork& net, const OptimState* optim, const EmaState* ema, std::uint64_t seed,
                           std::uint64_t step, std::map<std::string, std::string> meta) {
  Checkpoint c;
  c.seed = seed;
  c.step = step;
  c.meta = std::move(meta);
  const auto params = net.parameters();
  for (const Parameter* p : params) c.tensors.push_back({"param/" + p->name, p->value});
  if (optim) {
    c.meta["optim.method"] = std::string(to_string(optim->config.method));
    c.meta["optim.step"] = std::to_string(optim->step);
    for (std::size_t i = 0; i < optim->names.size(); ++i) {
      c.tensors.push_back({"adam.m/" + optim->names[i], optim->m[i]});
      c.tensors.push_back({"adam.v/" + optim->names[i], optim->v[i]});
    }
  }
  if (ema) {
    if (ema->shadow.size() != params.size()) throw std::invalid_argument("ema state does not match the network");
    c.meta["ema.decay"] = format_double(ema->decay);
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.push_back({"ema/" + params[i]->name, ema->shadow[i]});
  }
  return c;
}

void restore_parameters(ScoreNetwork& net, const Checkpoint& ckpt, bool use_ema) {
  for (Parameter* p : net.parameters()) {
    const std::string ema_name = "ema/" + p->name;
    const Tensor& v = use_ema && ckpt.has(ema_name) ? ckpt.tensor(ema_name) : ckpt.tensor("param/" + p->name);
    if (v.shape() != p->value.shape()) {
      throw CheckpointError("checkpoint tensor for '" + p->name + "' has shape " + to_string(v.shape()) +
                            ", model expects " + to_string(p->value.shape()));
    }
    p->value = v;
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["step"] = ckpt.step;
  header["seed"] = ckpt.seed;
  header["meta"] = ckpt.meta;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) tensors.push_back({{"name", t.name}, {"shape", t.value.shape()}});
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, ckpt.version);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : ckpt.tensors) {
    const auto d = t.value.data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + where);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string in = ss.str();
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(where + ": not a checkpoint (expected magic 'NRDM1')");
  }
  std::size_t pos = sizeof(kMagic);
  Checkpoint c;
  c.version = get_u32(in, pos, where);
  if (c.version != Checkpoint::kVersion) {
    throw CheckpointError(where + ": unsupported checkpoint version " + std::to_string(c.version) +
                          " (this reader supports version " + std::to_string(Checkpoint::kVersion) + ")");
  }
  const std::uint32_t len = get_u32(in, pos, where);
  if (in.size() < pos + len) throw CheckpointError(where + ": truncated checkpoint (header)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, len));
    pos += len;
    c.step = header.at("step").get<std::uint64_t>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.meta = header.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<Shape>();
      const std::size_t n = numel(shape);
      if (in.size() < pos + n * sizeof(double)) {
        throw CheckpointError(where + ": truncated checkpoint (tensor '" + t.at("name").get<std::string>() + "')");
      }
      std::vector<double> data(n);
      std::memcpy(data.data(), in.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
      c.tensors.push_back({t.at("name").get<std::string>(), Tensor(shape, std::move(data))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": malformed checkpoint header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(where + ": malformed checkpoint tensor: " + e.what());
  }
  if (pos != in.size()) throw CheckpointError(where + ": trailing bytes after the last tensor");
  return c;
}

}  // namespace nrdm
