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


#include "nrdm/app/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#define TOML_EXCEPTIONS 1
#define TOML_ENABLE_FORMATTERS 0
#include <toml++/toml.hpp>

#include "nrdm/csv.hpp"

namespace nrdm::app {

namespace {

using Slot = std::variant<std::int64_t*, double*, bool*, std::string*, std::vector<std::int64_t>*>;

struct Field {
  std::string_view section;
  std::string_view key;
  Slot slot;
};

std::vector<Field> fields(RunConfig& c) {
  auto& m = c.model;
  auto& s = c.schedule;
  auto& t = c.train;
  auto& d = c.data;
  auto& e = c.eval;
  auto& r = c.report;
  return {
      {"", "seed", &c.seed},
      {"model", "fashion", &m.fashion},
      {"model", "depth", &m.depth},
      {"model", "width", &m.width},
      {"model", "hidden", &m.hidden},
      {"model", "mapper", &m.mapper},
      {"model", "activation", &m.activation},
      {"model", "conditioning", &m.conditioning},
      {"model", "embed_dim", &m.embed_dim},
      {"model", "variant", &m.variant},
      {"model", "gate_mode", &m.gate_mode},
      {"model", "init_alpha", &m.init_alpha},
      {"model", "init_beta", &m.init_beta},
      {"model", "init_scale", &m.init_scale},
      {"model", "linear_init", &m.linear_init},
      {"model", "step", &m.step},
      {"model", "freeze_gates", &m.freeze_gates},
      {"model", "output", &m.output},
      {"schedule", "kind", &s.kind},
      {"schedule", "beta_min", &s.beta_min},
      {"schedule", "beta_max", &s.beta_max},
      {"schedule", "sigma_min", &s.sigma_min},
      {"schedule", "sigma_max", &s.sigma_max},
      {"schedule", "theta", &s.theta},
      {"schedule", "sigma", &s.sigma},
      {"train", "steps", &t.steps},
      {"train", "batch", &t.batch},
      {"train", "optimizer", &t.optimizer},
      {"train", "lr", &t.lr},
      {"train", "beta1", &t.beta1},
      {"train", "beta2", &t.beta2},
      {"train", "eps", &t.eps},
      {"train", "weight_decay", &t.weight_decay},
      {"train", "ema_decay", &t.ema_decay},
      {"train", "objective", &t.objective},
      {"train", "gamma", &t.gamma},
      {"train", "target", &t.target},
      {"train", "jacobian", &t.jacobian},
      {"train", "t_min", &t.t_min},
      {"train", "eval_size", &t.eval_size},
      {"train", "report_every", &t.report_every},
      {"train", "gates_only", &t.gates_only},
      {"train", "divergence_threshold", &t.divergence_threshold},
      {"data", "family", &d.family},
      {"data", "size", &d.size},
      {"data", "seed", &d.seed},
      {"data", "noise", &d.noise},
      {"data", "labels", &d.labels},
      {"data", "offset", &d.offset},
      {"data", "variance", &d.variance},
      {"eval", "n", &e.n},
      {"eval", "solver", &e.solver},
      {"eval", "steps", &e.steps},
      {"eval", "projections", &e.projections},
      {"eval", "mmd_rows", &e.mmd_rows},
      {"eval", "bins", &e.bins},
      {"eval", "use_ema", &e.use_ema},
      {"eval", "seeds", &e.seeds},
      {"eval", "depths", &e.depths},
      {"eval", "pfode_n", &e.pfode_n},
      {"eval", "pfode_points", &e.pfode_points},
      {"eval", "pfode_steps", &e.pfode_steps},
      {"eval", "pfode_t_max", &e.pfode_t_max},
      {"eval", "pfode_p0", &e.pfode_p0},
      {"report", "svg", &r.svg},
      {"report", "checkpoint", &r.checkpoint},
      {"report", "depths", &r.depths},
      {"report", "series", &r.series},
      {"report", "finetune_steps", &r.finetune_steps},
      {"report", "sensitivity_n", &r.sensitivity_n},
      {"report", "sensitivity_t", &r.sensitivity_t},
  };
}

constexpr std::string_view kSections[] = {"model", "schedule", "train", "data", "eval", "report"};

std::string dotted(std::string_view section, std::string_view key) {
  return section.empty() ? std::string(key) : std::string(section) + "." + std::string(key);
}

Field* find_field(std::vector<Field>& all, std::string_view section, std::string_view key) {
  for (auto& f : all) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

std::int64_t as_int(const toml::node& node, const std::string& name) {
  if (auto v = node.value_exact<std::int64_t>()) return *v;
  throw ConfigError(name + ": expected an integer");
}

void assign(const Field& field, const toml::node& node) {
  const std::string name = dotted(field.section, field.key);
  std::visit(
      [&](auto* target) {
        using T = std::remove_pointer_t<decltype(target)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          *target = as_int(node, name);
        } else if constexpr (std::is_same_v<T, double>) {
          if (auto v = node.value_exact<double>()) {
            *target = *v;
          } else if (auto i = node.value_exact<std::int64_t>()) {
            *target = static_cast<double>(*i);
          } else {
            throw ConfigError(name + ": expected a number");
          }
        } else if constexpr (std::is_same_v<T, bool>) {
          auto v = node.value_exact<bool>();
          if (!v) throw ConfigError(name + ": expected true or false");
          *target = *v;
        } else if constexpr (std::is_same_v<T, std::string>) {
          auto v = node.value_exact<std::string>();
          if (!v) throw ConfigError(name + ": expected a string");
          *target = *v;
        } else {
          const auto* arr = node.as_array();
          if (!arr) throw ConfigError(name + ": expected an array of integers");
          std::vector<std::int64_t> out;
          for (const auto& item : *arr) out.push_back(as_int(item, name));
          *target = std::move(out);
        }
      },
      field.slot);
}

toml::table parse_toml(std::string_view text, const std::string& source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

std::string toml_double(double v) {
  std::string s = format_double(v);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <typename Parse>
void check_name(Parse parse, const std::string& value, std::string_view key) {
  try {
    parse(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

void require(bool ok, std::string_view key, std::string_view what) {
  if (!ok) throw ConfigError(std::string(key) + " " + std::string(what));
}

}  // namespace

bool RunConfig::has_section(std::string_view name) const {
  return std::find(sections.begin(), sections.end(), name) != sections.end();
}

std::filesystem::path RunConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig config;
  config.base_dir = base_dir;
  auto all = fields(config);
  const toml::table root = parse_toml(text, "config");
  for (const auto& [key, node] : root) {
    const std::string_view k = key.str();
    if (node.is_table()) {
      if (std::find(std::begin(kSections), std::end(kSections), k) == std::end(kSections)) {
        throw ConfigError("unknown section [" + std::string(k) + "]");
      }
      config.sections.emplace_back(k);
      for (const auto& [sub, value] : *node.as_table()) {
        const Field* f = find_field(all, k, sub.str());
        if (!f) throw ConfigError("unknown key " + dotted(k, sub.str()));
        assign(*f, value);
      }
    } else {
      const Field* f = find_field(all, "", k);
      if (!f) throw ConfigError("unknown key " + std::string(k));
      assign(*f, node);
    }
  }
  validate(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string name(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  const auto dot = name.find('.');
  const std::string section = dot == std::string::npos ? "" : name.substr(0, dot);
  const std::string key = dot == std::string::npos ? name : name.substr(dot + 1);
  auto all = fields(config);
  const Field* f = find_field(all, section, key);
  if (!f) throw ConfigError("unknown key " + name);

  toml::table parsed;
  try {
    parsed = toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    // Bare words are strings.
    parsed = toml::table{{"v", value}};
  }
  assign(*f, *parsed.get("v"));
  validate(config);
}

void validate(const RunConfig& c) {
  check_name(parse_fashion, c.model.fashion, "model.fashion");
  check_name(parse_mapper_kind, c.model.mapper, "model.mapper");
  check_name(parse_activation, c.model.activation, "model.activation");
  check_name(parse_time_conditioning, c.model.conditioning, "model.conditioning");
  check_name(parse_variant, c.model.variant, "model.variant");
  check_name(parse_gate_mode, c.model.gate_mode, "model.gate_mode");
  check_name(parse_output_kind, c.model.output, "model.output");
  check_name(parse_schedule_kind, c.schedule.kind, "schedule.kind");
  check_name(parse_optim_method, c.train.optimizer, "train.optimizer");
  check_name(parse_objective, c.train.objective, "train.objective");
  check_name(parse_score_target, c.train.target, "train.target");
  check_name(parse_jacobian_mode, c.train.jacobian, "train.jacobian");
  check_name(parse_dataset_family, c.data.family, "data.family");
  check_name(parse_solver, c.eval.solver, "eval.solver");

  require(c.seed >= 0, "seed", "must be >= 0");
  require(c.model.depth >= 1, "model.depth", "must be >= 1");
  require(c.model.width >= 0, "model.width", "must be >= 0");
  require(c.model.hidden >= 1, "model.hidden", "must be >= 1");
  require(c.model.embed_dim >= 2 && c.model.embed_dim % 2 == 0, "model.embed_dim", "must be even and >= 2");
  require(std::isfinite(c.model.step) && c.model.step > 0.0, "model.step", "must be > 0");
  require(c.train.steps >= 0, "train.steps", "must be >= 0");
  require(c.train.batch >= 1, "train.batch", "must be >= 1");
  require(c.train.eval_size >= 1, "train.eval_size", "must be >= 1");
  require(c.train.report_every >= 0, "train.report_every", "must be >= 0");
  require(c.data.size >= 1, "data.size", "must be >= 1");
  require(c.data.seed >= 0, "data.seed", "must be >= 0");
  require(c.data.variance > 0.0, "data.variance", "must be > 0");
  require(c.eval.n >= 1, "eval.n", "must be >= 1");
  require(c.eval.steps >= 1, "eval.steps", "must be >= 1");
  require(c.eval.projections >= 1, "eval.projections", "must be >= 1");
  require(c.eval.mmd_rows >= 2, "eval.mmd_rows", "must be >= 2");
  require(c.eval.bins >= 1, "eval.bins", "must be >= 1");
  require(c.eval.seeds >= 1, "eval.seeds", "must be >= 1");
  require(!c.eval.depths.empty(), "eval.depths", "must not be empty");
  for (auto d : c.eval.depths) require(d >= 1, "eval.depths", "entries must be >= 1");
  require(c.eval.pfode_n >= 2, "eval.pfode_n", "must be >= 2");
  require(c.eval.pfode_points >= 1, "eval.pfode_points", "must be >= 1");
  require(c.eval.pfode_steps >= 2 && c.eval.pfode_steps % 2 == 0, "eval.pfode_steps", "must be even and >= 2");
  require(c.eval.pfode_t_max > 0.0 && c.eval.pfode_t_max <= 1.0, "eval.pfode_t_max", "must be in (0, 1]");
  require(c.eval.pfode_p0 == "mixture" || c.eval.pfode_p0 == "gaussian", "eval.pfode_p0",
          "must be \"mixture\" or \"gaussian\"");
  require(c.report.series == "gated" || c.report.series == "both", "report.series", "must be \"gated\" or \"both\"");
  require(c.report.finetune_steps >= 0, "report.finetune_steps", "must be >= 0");
  require(c.report.sensitivity_n >= 1, "report.sensitivity_n", "must be >= 1");
  require(c.report.sensitivity_t >= 0.0 && c.report.sensitivity_t <= 1.0, "report.sensitivity_t",
          "must be in [0, 1]");
  for (auto d : c.report.depths) require(d >= 0, "report.depths", "entries must be >= 0");

  // The library checks the remaining invariants (schedule ranges, optimizer
  // constants, dataset shape) when the objects are built.
  try {
    ClosedFormSchedule check(schedule_spec(c));
    (void)check;
    dataset_spec(c).validate();
    train_config(c).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string to_toml(const RunConfig& config) {
  RunConfig copy = config;
  auto all = fields(copy);
  std::ostringstream out;
  std::string_view current = "";
  for (const auto& f : all) {
    if (f.section != current) {
      out << "\n[" << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = ";
    std::visit(
        [&](auto* v) {
          using T = std::remove_pointer_t<decltype(v)>;
          if constexpr (std::is_same_v<T, std::int64_t>) {
            out << *v;
          } else if constexpr (std::is_same_v<T, double>) {
            out << toml_double(*v);
          } else if constexpr (std::is_same_v<T, bool>) {
            out << (*v ? "true" : "false");
          } else if constexpr (std::is_same_v<T, std::string>) {
            out << quote(*v);
          } else {
            out << "[";
            for (std::size_t i = 0; i < v->size(); ++i) out << (i ? ", " : "") << (*v)[i];
            out << "]";
          }
        },
        f.slot);
    out << "\n";
  }
  return out.str();
}

DatasetSpec dataset_spec(const RunConfig& c) {
  DatasetSpec spec;
  spec.family = parse_dataset_family(c.data.family);
  spec.mixture = GaussianMixture::symmetric_pair(2, c.data.offset, c.data.variance);
  spec.noise = c.data.noise;
  spec.size = static_cast<std::size_t>(c.data.size);
  spec.seed = static_cast<std::uint64_t>(c.data.seed);
  spec.labels = c.data.labels;
  return spec;
}

ScoreNetworkConfig network_config(const RunConfig& c) {
  const DatasetSpec data = dataset_spec(c);
  ScoreNetworkConfig net;
  net.data_dim = data.dim();
  net.num_classes = data.labels ? data.num_classes() : 0;
  net.output = parse_output_kind(c.model.output);
  auto& s = net.stack;
  s.fashion = parse_fashion(c.model.fashion);
  s.depth = static_cast<std::size_t>(c.model.depth);
  s.mapper.kind = parse_mapper_kind(c.model.mapper);
  s.mapper.width = c.model.width > 0 ? static_cast<std::size_t>(c.model.width) : net.data_dim;
  s.mapper.hidden = static_cast<std::size_t>(c.model.hidden);
  s.mapper.activation = parse_activation(c.model.activation);
  s.mapper.conditioning = parse_time_conditioning(c.model.conditioning);
  s.mapper.embed_dim = static_cast<std::size_t>(c.model.embed_dim);
  s.variant = parse_variant(c.model.variant);
  s.gate_mode = parse_gate_mode(c.model.gate_mode);
  s.init_alpha = c.model.init_alpha;
  s.init_beta = c.model.init_beta;
  s.init_scale = c.model.init_scale;
  s.linear_init = c.model.linear_init;
  s.step = c.model.step;
  s.freeze_gates = c.model.freeze_gates;
  return net;
}

ScoreNetwork make_network(const RunConfig& c) {
  Rng rng = Rng(static_cast<std::uint64_t>(c.seed)).split(0x494E4954);
  return ScoreNetwork(network_config(c), rng);
}

ScheduleSpec schedule_spec(const RunConfig& c) {
  ScheduleSpec spec;
  spec.kind = parse_schedule_kind(c.schedule.kind);
  spec.beta_min = c.schedule.beta_min;
  spec.beta_max = c.schedule.beta_max;
  spec.sigma_min = c.schedule.sigma_min;
  spec.sigma_max = c.schedule.sigma_max;
  spec.theta = c.schedule.theta;
  spec.sigma = c.schedule.sigma;
  return spec;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.steps = static_cast<std::size_t>(c.train.steps);
  t.batch = static_cast<std::size_t>(c.train.batch);
  t.loss.objective = parse_objective(c.train.objective);
  t.loss.gamma = c.train.gamma;
  t.loss.target = parse_score_target(c.train.target);
  t.loss.jacobian = parse_jacobian_mode(c.train.jacobian);
  t.optim.method = parse_optim_method(c.train.optimizer);
  t.optim.lr = c.train.lr;
  t.optim.beta1 = c.train.beta1;
  t.optim.beta2 = c.train.beta2;
  t.optim.eps = c.train.eps;
  t.optim.weight_decay = c.train.weight_decay;
  t.ema_decay = c.train.ema_decay;
  t.t_min = c.train.t_min;
  t.eval_size = static_cast<std::size_t>(c.train.eval_size);
  t.report_every = static_cast<std::size_t>(c.train.report_every);
  t.gates_only = c.train.gates_only;
  t.divergence_threshold = c.train.divergence_threshold;
  return t;
}

MetricOptions metric_options(const RunConfig& c) {
  MetricOptions m;
  m.projections = static_cast<std::size_t>(c.eval.projections);
  m.mmd_rows = static_cast<std::size_t>(c.eval.mmd_rows);
  m.bins = static_cast<std::size_t>(c.eval.bins);
  return m;
}

}  // namespace nrdm::app
