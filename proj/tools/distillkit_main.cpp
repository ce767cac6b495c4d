// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Verbs:
//
//   make-teacher  build a seeded encoder and save it
//   distill       run knowledge distillation against a teacher
//   features      dump per-layer features for a probe set
//   similarity    layer-by-layer similarity between two encoders
//   count-params  parameter counts for the built-in presets
//   rank          direction-aware rank aggregation of a results table

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distillkit/distillkit.hpp"

namespace fs = std::filesystem;
using namespace distillkit;

namespace {

// --- logging -------------------------------------------------------------

int g_log_level = 1;  // 0 error, 1 info, 2 debug

void init_log_level() {
  const char* env = std::getenv("DISTILLKIT_LOG");
  if (env == nullptr) return;
  std::string v(env);
  if (v == "error") {
    g_log_level = 0;
  } else if (v == "info") {
    g_log_level = 1;
  } else if (v == "debug") {
    g_log_level = 2;
  } else {
    throw ConfigError("DISTILLKIT_LOG must be error, info, or debug (got '" +
                      v + "')");
  }
}

void log_info(const std::string& msg) {
  if (g_log_level >= 1) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (g_log_level >= 2) std::cerr << "[debug] " << msg << "\n";
}

// --- shared option plumbing ----------------------------------------------

struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string synth;  // seed:n:min_dur:max_dur
  bool check = false;
};

// Expand the --synth shorthand into data.* overrides.
void expand_synth(const std::string& spec, std::vector<std::string>& sets) {
  if (spec.empty()) return;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : spec) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  if (parts.size() != 4) {
    throw ConfigError("--synth expects seed:n:min_dur:max_dur, got '" + spec +
                      "'");
  }
  sets.push_back("data.synth_seed=" + parts[0]);
  sets.push_back("data.synth_n=" + parts[1]);
  sets.push_back("data.synth_min_dur=" + parts[2]);
  sets.push_back("data.synth_max_dur=" + parts[3]);
  sets.push_back("data.manifest=");
}

Corpus build_corpus(const DataSpec& data) {
  if (!data.manifest.empty()) {
    log_info("loading corpus from manifest " + data.manifest);
    return load_manifest(data.manifest);
  }
  log_info("synthesizing corpus: seed " + std::to_string(data.synth_seed) +
           ", " + std::to_string(data.synth_n) + " items");
  return synth_corpus(data.synth_seed, data.synth_n, data.synth_min_dur,
                      data.synth_max_dur);
}

void write_manifest(const fs::path& out_dir, const ResolvedConfig& rc) {
  Json manifest{{"version", kVersion},
                {"seed", rc.app.train.seed},
                {"config", rc.doc}};
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) {
    throw IoError("cannot write manifest to '" + out_dir.string() + "'");
  }
}

// Per-item hidden states for a probe corpus, gradients off.
std::vector<std::vector<Tensor>> probe_states(const Encoder& enc,
                                              const Corpus& corpus) {
  std::vector<std::vector<Tensor>> out;
  out.reserve(corpus.size());
  for (const auto& item : corpus.items) {
    Tensor wave = Tensor::from_data(
        {item.size()}, std::vector<double>(item.samples.begin(),
                                           item.samples.end()));
    out.push_back(enc.hidden_states(wave));
  }
  return out;
}

// --- verbs -----------------------------------------------------------------

int run_make_teacher(const CommonOpts& opts) {
  std::vector<std::string> sets = opts.sets;
  expand_synth(opts.synth, sets);
  if (!opts.preset.empty()) sets.push_back("teacher.preset=" + opts.preset);
  ResolvedConfig rc = resolve_config("", opts.config_path, sets);
  if (opts.check) {
    std::cout << rc.dump();
    return 0;
  }
  if (opts.out_dir.empty()) throw ConfigError("make-teacher needs --out");
  if (!rc.app.teacher.checkpoint.empty()) {
    throw ConfigError(
        "make-teacher builds a fresh encoder; teacher.checkpoint must stay "
        "empty");
  }
  ModelConfig cfg = rc.app.teacher.model.resolve();
  log_info("building '" + cfg.name + "' (" +
           std::to_string(cfg.n_layers) + " layers, width " +
           std::to_string(cfg.embed_dim) + ", seed " +
           std::to_string(rc.app.teacher.model.seed) + ")");
  Encoder enc(cfg, rc.app.teacher.model.seed);
  fs::create_directories(opts.out_dir);
  fs::path ckpt = fs::path(opts.out_dir) / "teacher.dkd";
  save_encoder(ckpt, enc, rc.app.teacher.model.seed);
  write_manifest(opts.out_dir, rc);
  std::cout << "teacher: " << ckpt.string() << " ("
            << enc.parameter_count() << " params)\n";
  return 0;
}

int run_distill(const CommonOpts& opts, const std::string& resume) {
  std::vector<std::string> sets = opts.sets;
  expand_synth(opts.synth, sets);
  ResolvedConfig rc = resolve_config(opts.preset, opts.config_path, sets);
  if (opts.check) {
    std::cout << rc.dump();
    return 0;
  }
  if (opts.out_dir.empty()) throw ConfigError("distill needs --out");

  Encoder teacher = [&] {
    if (!rc.app.teacher.checkpoint.empty()) {
      if (!fs::exists(rc.app.teacher.checkpoint)) {
        throw ConfigError("teacher checkpoint '" + rc.app.teacher.checkpoint +
                          "' does not exist");
      }
      log_info("loading teacher from " + rc.app.teacher.checkpoint);
      return load_encoder(rc.app.teacher.checkpoint);
    }
    ModelConfig tcfg = rc.app.teacher.model.resolve();
    log_info("building fresh teacher '" + tcfg.name + "' (seed " +
             std::to_string(rc.app.teacher.model.seed) + ")");
    return Encoder(tcfg, rc.app.teacher.model.seed);
  }();

  ModelConfig scfg = rc.app.student.resolve();
  Encoder student = init_student(teacher, scfg, rc.app.student.seed);
  DistillObjective obj =
      rc.app.objective(teacher.config().n_layers, student.config().n_layers);

  if (obj.uses_pred()) {
    LayerMap pmap = realize_mapping(obj.pred_targets, nullptr,
                                    PairingMode::pred);
    student.attach_heads(pmap.pairs.size(), teacher.config().embed_dim,
                         RngStream(rc.app.student.seed).split("heads"));
    log_info("attached " + std::to_string(pmap.pairs.size()) +
             " prediction heads");
  }
  if (obj.uses_l2l() &&
      student.config().embed_dim != teacher.config().embed_dim) {
    student.attach_projections(
        student.config().n_layers, teacher.config().embed_dim,
        RngStream(rc.app.student.seed).split("projections"));
    log_info("attached " + std::to_string(student.config().n_layers) +
             " width projections");
  }

  Corpus corpus = build_corpus(rc.app.data);
  fs::create_directories(opts.out_dir);
  write_manifest(opts.out_dir, rc);

  log_info("distilling '" + scfg.name + "' from '" +
           teacher.config().name + "' with objective " +
           kd_kind_name(obj.kind) + " for " +
           std::to_string(rc.app.train.total_steps) + " steps");
  RunResult res =
      run_distillation(teacher, student, corpus, obj, rc.app.train,
                       opts.out_dir, rc.identity(),
                       resume.empty() ? fs::path{} : fs::path(resume));
  for (const auto& row : res.rows) log_debug(format_trace_row(row));
  if (!res.rows.empty()) {
    std::printf("steps %llu..%llu  loss %.6f -> %.6f\n",
                static_cast<unsigned long long>(res.rows.front().step),
                static_cast<unsigned long long>(res.rows.back().step),
                res.rows.front().loss, res.rows.back().loss);
  }
  std::cout << "trace: " << res.trace_path.string() << "\n"
            << "checkpoint: " << res.checkpoint_path.string() << "\n";
  return 0;
}

int run_features(const std::string& model_path, const CommonOpts& opts,
                 const std::vector<double>& logits) {
  if (model_path.empty()) throw ConfigError("features needs --model");
  if (opts.out_dir.empty()) throw ConfigError("features needs --out");
  std::vector<std::string> sets = opts.sets;
  expand_synth(opts.synth, sets);
  ResolvedConfig rc = resolve_config("", opts.config_path, sets);
  if (!fs::exists(model_path)) {
    throw ConfigError("model checkpoint '" + model_path + "' does not exist");
  }
  Encoder enc = load_encoder(model_path);
  Corpus corpus = build_corpus(rc.app.data);

  Checkpoint out;
  std::size_t n_layers = enc.config().n_layers;
  out.config_json = Json{{"features",
                          {{"model", model_path},
                           {"items", corpus.size()},
                           {"layers", n_layers}}}}
                        .dump();
  auto states = probe_states(enc, corpus);
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t l = 0; l < states[i].size(); ++l) {
      const Tensor& s = states[i][l];
      out.tensors.push_back({"item" + std::to_string(i) + ".layer" +
                                 std::to_string(l + 1),
                             s.shape(),
                             {s.values().begin(), s.values().end()}});
    }
    if (!logits.empty()) {
      Tensor pooled = weighted_sum_features(states[i], logits);
      out.tensors.push_back({"item" + std::to_string(i) + ".pooled",
                             pooled.shape(),
                             {pooled.values().begin(), pooled.values().end()}});
    }
  }
  fs::create_directories(opts.out_dir);
  fs::path path = fs::path(opts.out_dir) / "features.dkd";
  save_checkpoint(path, out);
  std::cout << "features: " << path.string() << " (" << corpus.size()
            << " items, " << n_layers << " layers)\n";
  return 0;
}

int run_similarity(const std::string& a_path, const std::string& b_path,
                   const std::string& kind_name, const CommonOpts& opts) {
  if (a_path.empty()) throw ConfigError("similarity needs --a");
  SimilarityKind kind;
  if (kind_name == "cosine") {
    kind = SimilarityKind::cosine;
  } else if (kind_name == "cka") {
    kind = SimilarityKind::cka;
  } else {
    throw ConfigError("--kind must be cosine or cka, got '" + kind_name + "'");
  }
  std::vector<std::string> sets = opts.sets;
  expand_synth(opts.synth, sets);
  ResolvedConfig rc = resolve_config("", opts.config_path, sets);
  if (!fs::exists(a_path)) {
    throw ConfigError("model checkpoint '" + a_path + "' does not exist");
  }
  std::string b_eff = b_path.empty() ? a_path : b_path;
  if (!fs::exists(b_eff)) {
    throw ConfigError("model checkpoint '" + b_eff + "' does not exist");
  }
  Encoder a = load_encoder(a_path);
  Corpus corpus = build_corpus(rc.app.data);
  auto a_states = probe_states(a, corpus);
  std::vector<std::vector<Tensor>> b_states;
  if (b_eff == a_path) {
    b_states = a_states;
  } else {
    Encoder b = load_encoder(b_eff);
    b_states = probe_states(b, corpus);
  }
  SimilarityMatrix m = layer_similarity(a_states, b_states, kind);

  std::string csv = "# layer similarity kind=" + kind_name + " a=" + a_path +
                    " b=" + b_eff + "\nlayer";
  for (std::size_t j = 0; j < m.cols; ++j) {
    csv += "," + std::to_string(j + 1);
  }
  csv += "\n";
  for (std::size_t i = 0; i < m.rows; ++i) {
    csv += std::to_string(i + 1);
    for (std::size_t j = 0; j < m.cols; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.10g", m.at(i, j));
      csv += buf;
    }
    csv += "\n";
  }
  std::cout << csv;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    fs::path path = fs::path(opts.out_dir) / "similarity.csv";
    std::ofstream out(path, std::ios::trunc);
    out << csv;
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    log_info("wrote " + path.string());
  }
  return 0;
}

int run_count_params(const std::string& preset, bool check) {
  std::vector<PresetEntry> entries;
  if (preset.empty()) {
    for (const auto& [name, entry] : model_presets()) entries.push_back(entry);
  } else {
    entries.push_back(find_preset(preset));
  }
  bool all_ok = true;
  std::cout << "name,params,reference_millions,within_1.5pct\n";
  for (const auto& e : entries) {
    std::size_t n = count_params(e.config);
    double millions = static_cast<double>(n) / 1e6;
    bool ok = std::fabs(millions - e.reference_million_params) <=
              0.015 * e.reference_million_params;
    all_ok = all_ok && ok;
    std::printf("%s,%zu,%.2f,%s\n", e.config.name.c_str(), n,
                e.reference_million_params, ok ? "yes" : "no");
  }
  if (check && !all_ok) {
    std::cerr << "error: a preset strays more than 1.5% from its reference "
                 "count\n";
    return 1;
  }
  return 0;
}

int run_rank(const std::string& table_path, const std::string& out_path) {
  if (table_path.empty()) throw ConfigError("rank needs --table");
  ResultsTable table = ResultsTable::from_csv(table_path);
  RankSummary summary = aggregate_ranks(table);
  std::string csv = "system,average_rank\n";
  for (std::size_t i = 0; i < table.systems.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", summary.average[i]);
    csv += table.systems[i] + "," + buf + "\n";
  }
  std::cout << csv;
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    out << csv;
    if (!out) throw IoError("cannot write '" + out_path + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-agnostic distillation of transformer speech encoders"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonOpts mk_opts, di_opts, fe_opts, si_opts;
  std::string resume, model_path, a_path, b_path, kind_name = "cosine";
  std::string count_preset, table_path, rank_out;
  std::string mk_seed, di_seed;
  std::vector<double> logits;
  bool count_check = false;

  auto add_common = [](CLI::App* sub, CommonOpts& o, bool with_synth = true) {
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--set", o.sets,
                    "dotted config override, e.g. run.peak_lr=3e-4");
    sub->add_option("--out", o.out_dir, "output directory");
    if (with_synth) {
      sub->add_option("--synth", o.synth,
                      "synthetic corpus spec seed:n:min_dur:max_dur");
    }
    sub->add_flag("--check", o.check, "validate and print the resolved "
                                      "config, then exit");
  };

  CLI::App* mk = app.add_subcommand("make-teacher",
                                    "build a seeded encoder and save it");
  add_common(mk, mk_opts, false);
  mk->add_option("--preset", mk_opts.preset, "model preset name");
  mk->add_option("--seed", mk_seed,
                 "teacher init seed (shorthand for teacher.seed=N)");

  CLI::App* di = app.add_subcommand("distill",
                                    "distill a student against a teacher");
  add_common(di, di_opts);
  di->add_option("--preset", di_opts.preset, "experiment preset name");
  di->add_option("--resume", resume, "checkpoint to resume from");
  di->add_option("--seed", di_seed, "run seed (shorthand for run.seed=N)");

  CLI::App* fe = app.add_subcommand("features",
                                    "dump per-layer features for a probe set");
  add_common(fe, fe_opts);
  fe->add_option("--model", model_path, "encoder checkpoint");
  fe->add_option("--logits", logits,
                 "layer logits for an extra softmax-pooled feature");

  CLI::App* si = app.add_subcommand(
      "similarity", "layer-by-layer similarity between two encoders");
  add_common(si, si_opts);
  si->add_option("--a", a_path, "first encoder checkpoint");
  si->add_option("--b", b_path, "second encoder checkpoint (default: --a)");
  si->add_option("--kind", kind_name, "cosine or cka");

  CLI::App* cp = app.add_subcommand("count-params",
                                    "parameter counts for built-in presets");
  cp->add_option("--preset", count_preset, "single preset (default: all)");
  cp->add_flag("--check", count_check,
               "fail unless every count is within 1.5% of its reference");

  CLI::App* rk = app.add_subcommand("rank",
                                    "aggregate ranks over a results table");
  rk->add_option("--table", table_path, "results CSV");
  rk->add_option("--out", rank_out, "also write the summary CSV here");

  try {
    app.parse(argc, argv);
    init_log_level();
    if (!mk_seed.empty()) mk_opts.sets.push_back("teacher.seed=" + mk_seed);
    if (!di_seed.empty()) di_opts.sets.push_back("run.seed=" + di_seed);
    if (mk->parsed()) return run_make_teacher(mk_opts);
    if (di->parsed()) return run_distill(di_opts, resume);
    if (fe->parsed()) return run_features(model_path, fe_opts, logits);
    if (si->parsed()) return run_similarity(a_path, b_path, kind_name, si_opts);
    if (cp->parsed()) return run_count_params(count_preset, count_check);
    if (rk->parsed()) return run_rank(table_path, rank_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
