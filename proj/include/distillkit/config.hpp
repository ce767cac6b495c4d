// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "distillkit/distill.hpp"
#include "distillkit/model.hpp"
#include "distillkit/train.hpp"

namespace distillkit {

using Json = nlohmann::json;

// Collects every problem found while validating a config so the user sees
// the full list at once instead of fixing keys one run at a time.
class ConfigIssues {
 public:
  void add(const std::string& path, const std::string& message) {
    issues_.push_back(path + ": " + message);
  }

  bool empty() const { return issues_.empty(); }

  void raise_if_any() const {
    if (issues_.empty()) return;
    std::string msg = std::to_string(issues_.size()) + " config issue(s):";
    for (const auto& s : issues_) msg += "\n  - " + s;
    throw ConfigError(msg);
  }

 private:
  std::vector<std::string> issues_;
};

// Depth-free mapping description; depths are supplied by the models when
// the strategy is resolved.
struct MappingSpec {
  std::string kind = "stride";  // all | stride | explicit | random
  std::size_t stride = 1;
  std::vector<std::size_t> layers;

  MappingStrategy resolve(std::size_t teacher_depth,
                          std::size_t student_depth) const {
    if (kind == "all") return MappingStrategy::all(teacher_depth, student_depth);
    if (kind == "stride") {
      return MappingStrategy::strided(teacher_depth, student_depth, stride);
    }
    if (kind == "explicit") {
      return MappingStrategy::explicit_layers(teacher_depth, student_depth,
                                              layers);
    }
    if (kind == "random") {
      return MappingStrategy::random(teacher_depth, student_depth);
    }
    throw ConfigError("mapping kind '" + kind + "' is not one of " +
                      "all|stride|explicit|random");
  }
};

// Model selection: a preset name, or explicit dimensions. `channels`
// overrides the frontend width either way (useful for small studies).
struct ModelSpec {
  std::string preset;
  std::size_t n_layers = 0;
  std::size_t embed_dim = 0;
  std::size_t ffn_dim = 0;
  std::size_t n_heads = 0;
  std::size_t channels = 512;
  std::uint64_t seed = 7;

  ModelConfig resolve() const {
    ModelConfig cfg;
    if (!preset.empty()) {
      cfg = find_preset(preset).config;
    } else {
      cfg.name = "custom";
      cfg.n_layers = n_layers;
      cfg.embed_dim = embed_dim;
      cfg.ffn_dim = ffn_dim;
      cfg.n_heads = n_heads;
    }
    cfg.frontend.channels = channels;
    cfg.validate();
    return cfg;
  }
};

struct TeacherSpec {
  std::string checkpoint;  // path to a saved encoder; wins over `model`
  ModelSpec model;
};

struct DataSpec {
  std::uint64_t synth_seed = 11;
  std::size_t synth_n = 64;
  double synth_min_dur = 1.0;
  double synth_max_dur = 1.0;
  std::string manifest;  // newline-delimited wav list; wins over synth
};

struct AppConfig {
  TrainConfig train;
  KdKind kd_kind = KdKind::l2l;
  double lambda_cos = 1.0;
  double pred_weight = 0.8;
  double l2l_weight = 0.2;
  MappingSpec pred_targets;
  MappingSpec l2l_map;
  ModelSpec student;
  TeacherSpec teacher;
  DataSpec data;

  DistillObjective objective(std::size_t teacher_depth,
                             std::size_t student_depth) const {
    DistillObjective obj;
    obj.kind = kd_kind;
    obj.lambda_cos = lambda_cos;
    obj.pred_weight = pred_weight;
    obj.l2l_weight = l2l_weight;
    if (obj.uses_pred()) {
      obj.pred_targets = pred_targets.resolve(teacher_depth, student_depth);
    }
    if (obj.uses_l2l()) {
      obj.l2l_map = l2l_map.resolve(teacher_depth, student_depth);
    }
    obj.validate();
    return obj;
  }
};

// ---------------------------------------------------------------------------
// defaults, presets, overrides
// ---------------------------------------------------------------------------

inline Json default_config() {
  return Json{
      {"run",
       {{"seed", 1},
        {"total_steps", 500},
        {"batch_size", 8},
        {"peak_lr", 5e-4},
        {"start_lr", 0.0},
        {"end_lr", 0.0},
        {"warmup_frac", 0.07},
        {"beta1", 0.9},
        {"beta2", 0.98},
        {"adam_eps", 1e-6},
        {"train_frontend", false},
        {"halt_after", 0},
        {"checkpoint_every", 0}}},
      {"kd",
       {{"kind", "l2l"},
        {"lambda_cos", 1.0},
        {"pred_weight", 0.8},
        {"l2l_weight", 0.2},
        {"pred_targets",
         {{"kind", "stride"}, {"stride", 4}, {"layers", Json::array()}}},
        {"l2l_map",
         {{"kind", "stride"}, {"stride", 1}, {"layers", Json::array()}}}}},
      {"student",
       {{"preset", "12l-half"},
        {"n_layers", 0},
        {"embed_dim", 0},
        {"ffn_dim", 0},
        {"n_heads", 0},
        {"channels", 512},
        {"seed", 7}}},
      {"teacher",
       {{"checkpoint", ""},
        {"preset", "hubert-base"},
        {"n_layers", 0},
        {"embed_dim", 0},
        {"ffn_dim", 0},
        {"n_heads", 0},
        {"channels", 512},
        {"seed", 3}}},
      {"data",
       {{"synth_seed", 11},
        {"synth_n", 64},
        {"synth_min_dur", 1.0},
        {"synth_max_dur", 1.0},
        {"manifest", ""}}}};
}

// Named experiment setups from the depth/width study: student preset plus
// matching objective. All assume a 12-layer teacher when choosing strides.
inline const std::map<std::string, Json>& experiment_presets() {
  static const std::map<std::string, Json> presets = {
      {"12l-half-pred",
       {{"student", {{"preset", "12l-half"}}},
        {"kd",
         {{"kind", "pred"},
          {"pred_targets", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"12l-half-l2l",
       {{"student", {{"preset", "12l-half"}}},
        {"kd",
         {{"kind", "l2l"}, {"l2l_map", {{"kind", "stride"}, {"stride", 1}}}}}}},
      {"12l-fourth-pred",
       {{"student", {{"preset", "12l-fourth"}}},
        {"kd",
         {{"kind", "pred"},
          {"pred_targets", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"12l-fourth-l2l",
       {{"student", {{"preset", "12l-fourth"}}},
        {"kd",
         {{"kind", "l2l"}, {"l2l_map", {{"kind", "stride"}, {"stride", 1}}}}}}},
      {"3l-one-pred",
       {{"student", {{"preset", "3l-one"}}},
        {"kd",
         {{"kind", "pred"},
          {"pred_targets", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"3l-one-l2l",
       {{"student", {{"preset", "3l-one"}}},
        {"kd",
         {{"kind", "l2l"}, {"l2l_map", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"3l-half-pred",
       {{"student", {{"preset", "3l-half"}}},
        {"kd",
         {{"kind", "pred"},
          {"pred_targets", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"3l-half-l2l",
       {{"student", {{"preset", "3l-half"}}},
        {"kd",
         {{"kind", "l2l"}, {"l2l_map", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"6l-half-pred",
       {{"student", {{"preset", "6l-half"}}},
        {"kd",
         {{"kind", "pred"},
          {"pred_targets", {{"kind", "stride"}, {"stride", 4}}}}}}},
      {"6l-half-l2l",
       {{"student", {{"preset", "6l-half"}}},
        {"kd",
         {{"kind", "l2l"}, {"l2l_map", {{"kind", "stride"}, {"stride", 2}}}}}}},
      {"6l-half-combined",
       {{"student", {{"preset", "6l-half"}}},
        {"kd",
         {{"kind", "combined"},
          {"pred_weight", 0.8},
          {"l2l_weight", 0.2},
          {"pred_targets", {{"kind", "stride"}, {"stride", 4}}},
          {"l2l_map", {{"kind", "stride"}, {"stride", 2}}}}}}},
      {"distilhubert-pred",
       {{"student", {{"preset", "distilhubert"}}},
        {"kd",
         {{"kind", "pred"},
          {"pred_targets",
           {{"kind", "explicit"},
            {"layers", Json::array({4, 8, 12})}}}}}}}};
  return presets;
}

// Parse the value side of a --set override: JSON literal when it parses
// as one (numbers, bools, arrays), bare string otherwise.
inline Json parse_override_value(const std::string& text) {
  Json v = Json::parse(text, nullptr, false);
  if (!v.is_discarded()) return v;
  return Json(text);
}

// Apply a dotted-path override like "run.peak_lr=3e-4" onto the doc.
inline void apply_override(Json& doc, const std::string& assignment,
                           ConfigIssues& issues) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    issues.add("--set " + assignment, "expected key.path=value");
    return;
  }
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  Json* at = &doc;
  std::size_t begin = 0;
  while (true) {
    std::size_t dot = path.find('.', begin);
    std::string key = path.substr(begin, dot - begin);
    if (key.empty()) {
      issues.add("--set " + assignment, "empty path segment");
      return;
    }
    if (dot == std::string::npos) {
      (*at)[key] = parse_override_value(value);
      return;
    }
    if (!at->contains(key)) (*at)[key] = Json::object();
    at = &(*at)[key];
    if (!at->is_object()) {
      issues.add("--set " + assignment,
                 "'" + key + "' is a value, not a section");
      return;
    }
    begin = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// validation and extraction
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const Json& obj, const std::string& path,
                       const std::vector<std::string>& allowed,
                       ConfigIssues& issues) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      issues.add(path + "." + it.key(), "unknown key");
    }
  }
}

inline double take_number(const Json& obj, const std::string& path,
                          const std::string& key, ConfigIssues& issues,
                          double fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number()) {
    issues.add(path + "." + key, "expected a number");
    return fallback;
  }
  return v.get<double>();
}

inline std::size_t take_count(const Json& obj, const std::string& path,
                              const std::string& key, ConfigIssues& issues,
                              std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    issues.add(path + "." + key, "expected a non-negative integer");
    return fallback;
  }
  return v.get<std::size_t>();
}

inline bool take_bool(const Json& obj, const std::string& path,
                      const std::string& key, ConfigIssues& issues,
                      bool fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_boolean()) {
    issues.add(path + "." + key, "expected true or false");
    return fallback;
  }
  return v.get<bool>();
}

inline std::string take_string(const Json& obj, const std::string& path,
                               const std::string& key, ConfigIssues& issues,
                               const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if (!v.is_string()) {
    issues.add(path + "." + key, "expected a string");
    return fallback;
  }
  return v.get<std::string>();
}

inline std::vector<std::size_t> take_index_list(const Json& obj,
                                                const std::string& path,
                                                const std::string& key,
                                                ConfigIssues& issues) {
  std::vector<std::size_t> out;
  if (!obj.contains(key)) return out;
  const Json& v = obj.at(key);
  if (!v.is_array()) {
    issues.add(path + "." + key, "expected an array of layer indices");
    return out;
  }
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() <= 0) {
      issues.add(path + "." + key, "layer indices must be positive integers");
      return {};
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

inline MappingSpec take_mapping(const Json& obj, const std::string& path,
                                ConfigIssues& issues) {
  MappingSpec spec;
  check_keys(obj, path, {"kind", "stride", "layers"}, issues);
  spec.kind = take_string(obj, path, "kind", issues, spec.kind);
  if (spec.kind != "all" && spec.kind != "stride" && spec.kind != "explicit" &&
      spec.kind != "random") {
    issues.add(path + ".kind", "'" + spec.kind +
                                   "' is not one of all|stride|explicit|random");
    spec.kind = "stride";
  }
  spec.stride = take_count(obj, path, "stride", issues, spec.stride);
  if (spec.kind == "stride" && spec.stride == 0) {
    issues.add(path + ".stride", "stride must be positive");
    spec.stride = 1;
  }
  spec.layers = take_index_list(obj, path, "layers", issues);
  if (spec.kind == "explicit" && spec.layers.empty()) {
    issues.add(path + ".layers", "explicit mapping needs a layer list");
  }
  return spec;
}

inline ModelSpec take_model(const Json& obj, const std::string& path,
                            ConfigIssues& issues, const std::string& preset,
                            std::uint64_t seed) {
  ModelSpec spec;
  spec.preset = preset;
  spec.seed = seed;
  spec.preset = take_string(obj, path, "preset", issues, spec.preset);
  spec.n_layers = take_count(obj, path, "n_layers", issues, 0);
  spec.embed_dim = take_count(obj, path, "embed_dim", issues, 0);
  spec.ffn_dim = take_count(obj, path, "ffn_dim", issues, 0);
  spec.n_heads = take_count(obj, path, "n_heads", issues, 0);
  spec.channels = take_count(obj, path, "channels", issues, 512);
  spec.seed = static_cast<std::uint64_t>(
      take_count(obj, path, "seed", issues, static_cast<std::size_t>(seed)));
  if (!spec.preset.empty()) {
    bool known = false;
    for (const auto& p : model_presets()) known |= p.first == spec.preset;
    if (!known) {
      std::string names;
      for (const auto& p : model_presets()) {
        if (!names.empty()) names += ", ";
        names += p.first;
      }
      issues.add(path + ".preset",
                 "unknown preset '" + spec.preset + "' (have: " + names + ")");
    }
  } else if (spec.n_layers == 0 || spec.embed_dim == 0 || spec.ffn_dim == 0 ||
             spec.n_heads == 0) {
    issues.add(path, "needs either a preset or all of "
                     "n_layers/embed_dim/ffn_dim/n_heads");
  }
  if (spec.channels == 0) issues.add(path + ".channels", "must be positive");
  return spec;
}

}  // namespace detail

// Validate the merged document and extract the typed config. Every issue
// is collected before anything is thrown.
inline AppConfig extract_config(const Json& doc) {
  ConfigIssues issues;
  if (!doc.is_object()) {
    issues.add("config", "top level must be a JSON object");
    issues.raise_if_any();
  }
  detail::check_keys(doc, "config",
                     {"run", "kd", "student", "teacher", "data"}, issues);
  AppConfig app;

  const Json run = doc.value("run", Json::object());
  detail::check_keys(
      run, "run",
      {"seed", "total_steps", "batch_size", "peak_lr", "start_lr", "end_lr",
       "warmup_frac", "beta1", "beta2", "adam_eps", "train_frontend",
       "halt_after", "checkpoint_every"},
      issues);
  app.train.seed = static_cast<std::uint64_t>(
      detail::take_count(run, "run", "seed", issues, 1));
  app.train.total_steps =
      detail::take_count(run, "run", "total_steps", issues, 500);
  app.train.batch_size =
      detail::take_count(run, "run", "batch_size", issues, 8);
  app.train.peak_lr = detail::take_number(run, "run", "peak_lr", issues, 5e-4);
  app.train.start_lr = detail::take_number(run, "run", "start_lr", issues, 0.0);
  app.train.end_lr = detail::take_number(run, "run", "end_lr", issues, 0.0);
  app.train.warmup_frac =
      detail::take_number(run, "run", "warmup_frac", issues, 0.07);
  app.train.beta1 = detail::take_number(run, "run", "beta1", issues, 0.9);
  app.train.beta2 = detail::take_number(run, "run", "beta2", issues, 0.98);
  app.train.adam_eps =
      detail::take_number(run, "run", "adam_eps", issues, 1e-6);
  app.train.train_frontend =
      detail::take_bool(run, "run", "train_frontend", issues, false);
  app.train.halt_after =
      detail::take_count(run, "run", "halt_after", issues, 0);
  app.train.checkpoint_every =
      detail::take_count(run, "run", "checkpoint_every", issues, 0);
  if (app.train.total_steps == 0) {
    issues.add("run.total_steps", "must be positive");
  }
  if (app.train.batch_size == 0) issues.add("run.batch_size", "must be positive");
  if (app.train.peak_lr <= 0.0) issues.add("run.peak_lr", "must be positive");
  if (!(app.train.warmup_frac >= 0.0 && app.train.warmup_frac <= 1.0)) {
    issues.add("run.warmup_frac", "must lie in [0, 1]");
  }

  const Json kd = doc.value("kd", Json::object());
  detail::check_keys(kd, "kd",
                     {"kind", "lambda_cos", "pred_weight", "l2l_weight",
                      "pred_targets", "l2l_map"},
                     issues);
  std::string kind = detail::take_string(kd, "kd", "kind", issues, "l2l");
  if (kind == "pred") {
    app.kd_kind = KdKind::pred;
  } else if (kind == "pred_all") {
    app.kd_kind = KdKind::pred_all;
  } else if (kind == "l2l") {
    app.kd_kind = KdKind::l2l;
  } else if (kind == "l2l_n_of_m") {
    app.kd_kind = KdKind::l2l_n_of_m;
  } else if (kind == "combined") {
    app.kd_kind = KdKind::combined;
  } else {
    issues.add("kd.kind", "'" + kind + "' is not one of "
                          "pred|pred_all|l2l|l2l_n_of_m|combined");
  }
  app.lambda_cos = detail::take_number(kd, "kd", "lambda_cos", issues, 1.0);
  app.pred_weight = detail::take_number(kd, "kd", "pred_weight", issues, 0.8);
  app.l2l_weight = detail::take_number(kd, "kd", "l2l_weight", issues, 0.2);
  if (app.lambda_cos < 0.0) issues.add("kd.lambda_cos", "must be >= 0");
  if (app.kd_kind == KdKind::combined &&
      std::fabs(app.pred_weight + app.l2l_weight - 1.0) > 1e-12) {
    issues.add("kd.pred_weight", "pred_weight + l2l_weight must equal 1");
  }
  if (kd.contains("pred_targets")) {
    app.pred_targets =
        detail::take_mapping(kd.at("pred_targets"), "kd.pred_targets", issues);
    if (app.pred_targets.kind == "random") {
      issues.add("kd.pred_targets.kind",
                 "random selection only applies to layer-to-layer maps");
    }
  }
  if (kd.contains("l2l_map")) {
    app.l2l_map = detail::take_mapping(kd.at("l2l_map"), "kd.l2l_map", issues);
  }

  const Json student = doc.value("student", Json::object());
  detail::check_keys(student, "student",
                     {"preset", "n_layers", "embed_dim", "ffn_dim", "n_heads",
                      "channels", "seed"},
                     issues);
  app.student = detail::take_model(student, "student", issues, "12l-half", 7);

  const Json teacher = doc.value("teacher", Json::object());
  detail::check_keys(teacher, "teacher",
                     {"checkpoint", "preset", "n_layers", "embed_dim",
                      "ffn_dim", "n_heads", "channels", "seed"},
                     issues);
  app.teacher.checkpoint =
      detail::take_string(teacher, "teacher", "checkpoint", issues, "");
  if (app.teacher.checkpoint.empty()) {
    app.teacher.model =
        detail::take_model(teacher, "teacher", issues, "hubert-base", 3);
  } else {
    app.teacher.model.preset =
        detail::take_string(teacher, "teacher", "preset", issues, "");
  }

  const Json data = doc.value("data", Json::object());
  detail::check_keys(
      data, "data",
      {"synth_seed", "synth_n", "synth_min_dur", "synth_max_dur", "manifest"},
      issues);
  app.data.synth_seed = static_cast<std::uint64_t>(
      detail::take_count(data, "data", "synth_seed", issues, 11));
  app.data.synth_n = detail::take_count(data, "data", "synth_n", issues, 64);
  app.data.synth_min_dur =
      detail::take_number(data, "data", "synth_min_dur", issues, 1.0);
  app.data.synth_max_dur =
      detail::take_number(data, "data", "synth_max_dur", issues, 1.0);
  app.data.manifest = detail::take_string(data, "data", "manifest", issues, "");
  if (app.data.manifest.empty()) {
    if (app.data.synth_n == 0) issues.add("data.synth_n", "must be positive");
    if (!(app.data.synth_min_dur >= 0.025 &&
          app.data.synth_max_dur <= 10.0 &&
          app.data.synth_min_dur <= app.data.synth_max_dur)) {
      issues.add("data.synth_min_dur",
                 "durations must lie in [0.025, 10] with min <= max");
    }
  }

  issues.raise_if_any();
  return app;
}

// Full config resolution: defaults, then an optional experiment preset,
// then the config file, then --set overrides; strict-validated at the end.
struct ResolvedConfig {
  Json doc;
  AppConfig app;

  std::string dump() const { return doc.dump(2) + "\n"; }

  // Stable identity string embedded in checkpoints: execution knobs that
  // may legitimately differ between a run and its resume are stripped.
  std::string identity() const {
    Json id = doc;
    if (id.contains("run")) {
      id["run"].erase("halt_after");
      id["run"].erase("checkpoint_every");
    }
    return id.dump();
  }
};

inline ResolvedConfig resolve_config(
    const std::string& preset_name, const std::filesystem::path& config_path,
    const std::vector<std::string>& overrides) {
  ConfigIssues issues;
  Json doc = default_config();
  if (!preset_name.empty()) {
    auto it = experiment_presets().find(preset_name);
    if (it == experiment_presets().end()) {
      std::string names;
      for (const auto& [n, _] : experiment_presets()) {
        if (!names.empty()) names += ", ";
        names += n;
      }
      throw ConfigError("unknown experiment preset '" + preset_name +
                        "' (have: " + names + ")");
    }
    doc.merge_patch(it->second);
  }
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      throw ConfigError("cannot open config '" + config_path.string() + "'");
    }
    Json file = Json::parse(in, nullptr, false);
    if (file.is_discarded()) {
      throw ConfigError("config '" + config_path.string() +
                        "' is not valid JSON");
    }
    doc.merge_patch(file);
  }
  for (const auto& assignment : overrides) {
    apply_override(doc, assignment, issues);
  }
  issues.raise_if_any();
  ResolvedConfig rc;
  rc.doc = std::move(doc);
  rc.app = extract_config(rc.doc);
  return rc;
}

// ---------------------------------------------------------------------------
// encoder round trips
// ---------------------------------------------------------------------------

inline Json model_config_to_json(const ModelConfig& cfg) {
  return Json{{"name", cfg.name},
              {"n_layers", cfg.n_layers},
              {"embed_dim", cfg.embed_dim},
              {"ffn_dim", cfg.ffn_dim},
              {"n_heads", cfg.n_heads},
              {"channels", cfg.frontend.channels},
              {"pos_conv_kernel", cfg.pos_conv_kernel},
              {"pos_conv_groups", cfg.pos_conv_groups},
              {"norm_eps", cfg.norm_eps}};
}

inline ModelConfig model_config_from_json(const Json& j) {
  ConfigIssues issues;
  detail::check_keys(j, "model",
                     {"name", "n_layers", "embed_dim", "ffn_dim", "n_heads",
                      "channels", "pos_conv_kernel", "pos_conv_groups",
                      "norm_eps"},
                     issues);
  ModelConfig cfg;
  cfg.name = detail::take_string(j, "model", "name", issues, "custom");
  cfg.n_layers = detail::take_count(j, "model", "n_layers", issues, 0);
  cfg.embed_dim = detail::take_count(j, "model", "embed_dim", issues, 0);
  cfg.ffn_dim = detail::take_count(j, "model", "ffn_dim", issues, 0);
  cfg.n_heads = detail::take_count(j, "model", "n_heads", issues, 0);
  cfg.frontend.channels =
      detail::take_count(j, "model", "channels", issues, 512);
  cfg.pos_conv_kernel =
      detail::take_count(j, "model", "pos_conv_kernel", issues, 128);
  cfg.pos_conv_groups =
      detail::take_count(j, "model", "pos_conv_groups", issues, 16);
  cfg.norm_eps = detail::take_number(j, "model", "norm_eps", issues, 1e-5);
  issues.raise_if_any();
  cfg.validate();
  return cfg;
}

// Save an encoder (weights plus enough config to rebuild it) in the
// checkpoint container. Aux heads/projections ride along under their
// usual names and are re-attached on load by inspecting the table.
inline void save_encoder(const std::filesystem::path& path, const Encoder& enc,
                         std::uint64_t seed) {
  Checkpoint ck;
  ck.config_json =
      Json{{"model", model_config_to_json(enc.config())}, {"seed", seed}}
          .dump();
  for (const auto& p : enc.all_params()) {
    ck.tensors.push_back({p.name, p.tensor.shape(),
                          {p.tensor.values().begin(), p.tensor.values().end()}});
  }
  ck.step = 0;
  RngStream root(seed);
  ck.rng_key = root.key();
  ck.rng_counter = root.counter();
  save_checkpoint(path, ck);
}

// Rebuild an encoder from a checkpoint. save_encoder outputs carry a
// "model" block; training checkpoints carry the full run config instead,
// in which case the stored encoder is the student and its spec comes
// from the "student" block. Optimizer entries are ignored. Parameters
// come back frozen.
inline Encoder load_encoder(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  Json j = Json::parse(ck.config_json, nullptr, false);
  if (j.is_discarded() || !j.is_object() ||
      (!j.contains("model") && !j.contains("student"))) {
    throw ParseError("checkpoint '" + path.string() +
                     "' carries neither a model nor a student block");
  }
  ModelConfig cfg;
  std::uint64_t seed = 0;
  if (j.contains("model")) {
    cfg = model_config_from_json(j.at("model"));
    if (j.contains("seed") && j.at("seed").is_number_unsigned()) {
      seed = j.at("seed").get<std::uint64_t>();
    }
  } else {
    ConfigIssues issues;
    ModelSpec spec =
        detail::take_model(j.at("student"), "student", issues, "", 0);
    issues.raise_if_any();
    cfg = spec.resolve();
    seed = spec.seed;
  }
  Encoder enc(cfg, seed);

  auto aux_extent = [&](const std::string& prefix) {
    std::size_t count = 0, dim = 0;
    for (const auto& t : ck.tensors) {
      if (t.name.rfind(prefix, 0) != 0) continue;
      std::size_t dot = t.name.find('.', prefix.size());
      if (dot == std::string::npos || t.name.substr(dot) != ".weight") continue;
      std::size_t idx = 0;
      try {
        idx = std::stoul(t.name.substr(prefix.size(), dot - prefix.size()));
      } catch (const std::exception&) {
        continue;
      }
      count = std::max(count, idx + 1);
      if (t.shape.size() == 2) dim = t.shape[1];
    }
    return std::pair<std::size_t, std::size_t>(count, dim);
  };
  auto [n_heads, head_dim] = aux_extent("head");
  auto [n_projs, proj_dim] = aux_extent("proj");
  if (n_heads > 0) {
    enc.attach_heads(n_heads, head_dim, RngStream(seed).split("heads"));
  }
  if (n_projs > 0) {
    enc.attach_projections(n_projs, proj_dim,
                           RngStream(seed).split("projections"));
  }

  std::size_t applied = 0;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("adam.", 0) == 0) continue;
    Tensor dst = enc.param(t.name);
    if (dst.shape() != t.shape) {
      throw ParseError("checkpoint '" + path.string() +
                       "': shape mismatch for '" + t.name + "'");
    }
    std::span<double> x = dst.mutable_values();
    std::copy(t.values.begin(), t.values.end(), x.begin());
    ++applied;
  }
  if (applied != enc.all_params().size()) {
    throw ParseError("checkpoint '" + path.string() + "' carries " +
                     std::to_string(applied) + " parameters, model needs " +
                     std::to_string(enc.all_params().size()));
  }
  enc.set_requires_grad(false);
  return enc;
}

}  // namespace distillkit
