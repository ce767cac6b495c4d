// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "distillkit/checkpoint.hpp"
#include "distillkit/data.hpp"
#include "distillkit/distill.hpp"
#include "distillkit/model.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

// ---------------------------------------------------------------------------
// learning-rate schedule
// ---------------------------------------------------------------------------

// Tri-phase linear schedule over [0, total]: start_lr up to peak_lr at
// round(warmup_frac * total), back down to end_lr at total. Both segments
// are exact linear interpolations, so the two formulas agree at the knee.
inline double lr_at(std::uint64_t step, std::uint64_t total, double peak_lr,
                    double start_lr = 0.0, double end_lr = 0.0,
                    double warmup_frac = 0.07) {
  if (total == 0) throw ContractError("lr schedule: total must be positive");
  if (step > total) {
    throw ContractError("lr schedule: step " + std::to_string(step) +
                        " beyond total " + std::to_string(total));
  }
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) {
    throw ContractError("lr schedule: warmup fraction must lie in [0, 1]");
  }
  if (peak_lr < 0.0 || start_lr < 0.0 || end_lr < 0.0) {
    throw ContractError("lr schedule: rates must be non-negative");
  }
  auto warmup_end = static_cast<std::uint64_t>(
      std::llround(warmup_frac * static_cast<double>(total)));
  if (step <= warmup_end) {
    if (warmup_end == 0) return peak_lr;
    return start_lr + (peak_lr - start_lr) * (static_cast<double>(step) /
                                              static_cast<double>(warmup_end));
  }
  return end_lr + (peak_lr - end_lr) *
                      (static_cast<double>(total - step) /
                       static_cast<double>(total - warmup_end));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// Adam with bias correction. First/second moments are kept per parameter
// name so they can round-trip through checkpoints.
struct AdamState {
  std::uint64_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

inline void adam_step(std::vector<NamedParam>& params, AdamState& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.98,
                      double eps = 1e-6) {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ContractError("adam: betas must lie in [0, 1)");
  }
  if (eps <= 0.0) throw ContractError("adam: eps must be positive");
  st.t += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (auto& p : params) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    std::span<const double> g = p.tensor.grad();
    std::span<double> x = p.tensor.mutable_values();
    auto& m = st.m[p.name];
    auto& v = st.v[p.name];
    if (m.empty()) m.assign(x.size(), 0.0);
    if (v.empty()) v.assign(x.size(), 0.0);
    if (m.size() != x.size() || v.size() != x.size()) {
      throw ContractError("adam: stale moment size for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      x[i] -= lr * update;
    }
  }
}

// ---------------------------------------------------------------------------
// student initialization
// ---------------------------------------------------------------------------

// Fresh student whose convolutional frontend is copied verbatim from the
// teacher; everything above the frontend is freshly seeded.
inline Encoder init_student(const Encoder& teacher, const ModelConfig& cfg,
                            std::uint64_t seed) {
  if (cfg.frontend.channels != teacher.config().frontend.channels) {
    throw ConfigError(
        "init_student: frontend channels differ (student " +
        std::to_string(cfg.frontend.channels) + ", teacher " +
        std::to_string(teacher.config().frontend.channels) +
        "); the frontend is transferred, not distilled");
  }
  Encoder student(cfg, seed);
  for (auto& p : student.core_params()) {
    if (p.name.rfind("frontend.", 0) != 0) continue;
    Tensor src = teacher.param(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw ConfigError("init_student: shape mismatch for '" + p.name + "'");
    }
    std::span<double> dst = p.tensor.mutable_values();
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  }
  return student;
}

// ---------------------------------------------------------------------------
// training driver
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t total_steps = 1000;
  std::size_t batch_size = 8;
  double peak_lr = 5e-4;
  double start_lr = 0.0;
  double end_lr = 0.0;
  double warmup_frac = 0.07;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-6;
  bool train_frontend = false;
  std::uint64_t seed = 1;
  std::size_t halt_after = 0;        // stop early after this many steps; 0 = off
  std::size_t checkpoint_every = 0;  // extra rolling checkpoints; 0 = final only

  void validate() const {
    if (total_steps == 0) throw ConfigError("train: total_steps must be > 0");
    if (batch_size == 0) throw ConfigError("train: batch_size must be > 0");
    if (peak_lr <= 0.0) throw ConfigError("train: peak_lr must be > 0");
    lr_at(0, total_steps, peak_lr, start_lr, end_lr, warmup_frac);
  }
};

struct TraceRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double pred_term = 0.0;
  double l2l_term = 0.0;
};

inline constexpr const char* kTraceHeader = "step,lr,loss,pred_term,l2l_term";

inline std::string format_trace_row(const TraceRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(r.step), r.lr, r.loss,
                r.pred_term, r.l2l_term);
  return buf;
}

// Single-process distillation loop. The teacher is frozen outright; the
// student's frontend is frozen too unless train_frontend is set, which is
// what makes the per-item frame cache sound: frozen, bit-identical
// frontends produce the same frames at every step, and init_student
// guarantees the bit-identical part. Batch order and the per-step n-of-m
// draws are derived statelessly from (seed, epoch) and (seed, step), so
// resuming from a checkpoint replays the exact run.
class Trainer {
 public:
  Trainer(Encoder& teacher, Encoder& student, const Corpus& corpus,
          DistillObjective obj, TrainConfig cfg)
      : teacher_(teacher),
        student_(student),
        corpus_(corpus),
        obj_(std::move(obj)),
        cfg_(std::move(cfg)) {
    cfg_.validate();
    obj_.validate();
    if (corpus_.size() == 0) throw ContractError("trainer: empty corpus");
    teacher_.set_requires_grad(false);
    student_.set_requires_grad(true);
    if (!cfg_.train_frontend) student_.set_frontend_requires_grad(false);
    trainable_ = student_.trainable_params();
    if (trainable_.empty()) {
      throw ConfigError("trainer: no trainable parameters");
    }
    batches_per_epoch_ =
        (corpus_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    share_cache_ = !cfg_.train_frontend && frontends_match();
  }

  std::uint64_t completed() const { return step_; }
  AdamState& adam() { return adam_; }
  const std::vector<NamedParam>& trainable() const { return trainable_; }

  TraceRow step_once() {
    if (step_ >= cfg_.total_steps) {
      throw ContractError("trainer: run already complete");
    }
    std::uint64_t k = step_ + 1;
    double lr = lr_at(k, cfg_.total_steps, cfg_.peak_lr, cfg_.start_lr,
                      cfg_.end_lr, cfg_.warmup_frac);
    const std::vector<std::size_t>& indices = batch_for(k);

    ItemStates sstates, tstates;
    ObjectiveEval ev;
    try {
      for (std::size_t idx : indices) {
        tstates.push_back(teacher_.states_from_frames(teacher_frames(idx)));
        sstates.push_back(student_.states_from_frames(student_frames(idx)));
      }
      RngStream nofm = RngStream(cfg_.seed).split("nofm").split(k);
      RngStream* nofm_p =
          obj_.kind == KdKind::l2l_n_of_m ? &nofm : nullptr;
      ev = evaluate_objective(student_, sstates, tstates, obj_, nofm_p);
    } catch (const NumericError& e) {
      throw TrainAbort(std::string("forward pass: ") + e.what(), k, lr);
    }
    double loss = ev.loss.value();
    if (!std::isfinite(loss)) throw TrainAbort("non-finite loss", k, lr);

    for (auto& p : trainable_) p.tensor.clear_grad();
    try {
      ev.loss.backward();
    } catch (const NumericError& e) {
      throw TrainAbort(std::string("backward pass: ") + e.what(), k, lr);
    }
    for (const auto& p : trainable_) {
      if (!p.tensor.has_grad()) continue;
      for (double g : p.tensor.grad()) {
        if (!std::isfinite(g)) {
          throw TrainAbort("non-finite gradient in '" + p.name + "'", k, lr);
        }
      }
    }
    adam_step(trainable_, adam_, lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
    step_ = k;
    return TraceRow{k, lr, loss, ev.pred_term, ev.l2l_term};
  }

  Checkpoint snapshot(const std::string& config_json) const {
    Checkpoint ck;
    ck.config_json = config_json;
    for (const auto& p : student_.all_params()) {
      ck.tensors.push_back(
          {p.name, p.tensor.shape(),
           {p.tensor.values().begin(), p.tensor.values().end()}});
    }
    for (const auto& [name, m] : adam_.m) {
      ck.tensors.push_back({"adam.m." + name, {m.size()}, m});
    }
    for (const auto& [name, v] : adam_.v) {
      ck.tensors.push_back({"adam.v." + name, {v.size()}, v});
    }
    ck.step = step_;
    RngStream root(cfg_.seed);
    ck.rng_key = root.key();
    ck.rng_counter = root.counter();
    return ck;
  }

  void restore(const Checkpoint& ck) {
    if (ck.step > cfg_.total_steps) {
      throw ConfigError("restore: checkpoint is " + std::to_string(ck.step) +
                        " steps in, past total_steps " +
                        std::to_string(cfg_.total_steps));
    }
    std::size_t applied = 0;
    adam_ = AdamState{};
    adam_.t = ck.step;
    for (const auto& t : ck.tensors) {
      if (t.name.rfind("adam.m.", 0) == 0) {
        adam_.m[t.name.substr(7)] = t.values;
        continue;
      }
      if (t.name.rfind("adam.v.", 0) == 0) {
        adam_.v[t.name.substr(7)] = t.values;
        continue;
      }
      Tensor dst = student_.param(t.name);
      if (dst.shape() != t.shape) {
        throw ConfigError("restore: shape mismatch for '" + t.name + "'");
      }
      std::span<double> x = dst.mutable_values();
      std::copy(t.values.begin(), t.values.end(), x.begin());
      ++applied;
    }
    if (applied != student_.all_params().size()) {
      throw ConfigError("restore: checkpoint carries " +
                        std::to_string(applied) + " parameters, model has " +
                        std::to_string(student_.all_params().size()));
    }
    for (const auto& [name, m] : adam_.m) {
      Tensor p = student_.param(name);
      if (m.size() != p.numel() || adam_.v[name].size() != p.numel()) {
        throw ConfigError("restore: optimizer moment size mismatch for '" +
                          name + "'");
      }
    }
    step_ = ck.step;
    share_cache_ = !cfg_.train_frontend && frontends_match();
    student_cache_.clear();
  }

 private:
  bool frontends_match() const {
    for (const auto& p : teacher_.core_params()) {
      if (p.name.rfind("frontend.", 0) != 0) continue;
      Tensor s = student_.param(p.name);
      if (s.shape() != p.tensor.shape()) return false;
      auto a = p.tensor.values();
      auto b = s.values();
      if (!std::equal(a.begin(), a.end(), b.begin())) return false;
    }
    return true;
  }

  Tensor item_wave(std::size_t idx) const {
    const auto& s = corpus_.items[idx].samples;
    return Tensor::from_data({s.size()}, std::vector<double>(s.begin(),
                                                             s.end()));
  }

  Tensor teacher_frames(std::size_t idx) {
    auto it = teacher_cache_.find(idx);
    if (it != teacher_cache_.end()) return it->second;
    Tensor frames = teacher_.frontend_frames(item_wave(idx));
    teacher_cache_.emplace(idx, frames);
    return frames;
  }

  Tensor student_frames(std::size_t idx) {
    if (cfg_.train_frontend) return student_.frontend_frames(item_wave(idx));
    if (share_cache_) return teacher_frames(idx);
    auto it = student_cache_.find(idx);
    if (it != student_cache_.end()) return it->second;
    Tensor frames = student_.frontend_frames(item_wave(idx));
    student_cache_.emplace(idx, frames);
    return frames;
  }

  const std::vector<std::size_t>& batch_for(std::uint64_t step1) {
    std::uint64_t epoch = (step1 - 1) / batches_per_epoch_;
    if (!have_epoch_ || epoch != cached_epoch_) {
      epoch_batches_ = epoch_batch_indices(corpus_.size(), cfg_.batch_size,
                                           cfg_.seed, epoch);
      cached_epoch_ = epoch;
      have_epoch_ = true;
    }
    return epoch_batches_[(step1 - 1) % batches_per_epoch_];
  }

  Encoder& teacher_;
  Encoder& student_;
  const Corpus& corpus_;
  DistillObjective obj_;
  TrainConfig cfg_;
  AdamState adam_;
  std::vector<NamedParam> trainable_;
  std::uint64_t step_ = 0;
  std::size_t batches_per_epoch_ = 1;
  bool share_cache_ = false;
  std::unordered_map<std::size_t, Tensor> teacher_cache_;
  std::unordered_map<std::size_t, Tensor> student_cache_;
  std::vector<std::vector<std::size_t>> epoch_batches_;
  std::uint64_t cached_epoch_ = 0;
  bool have_epoch_ = false;
};

struct RunResult {
  std::vector<TraceRow> rows;
  std::filesystem::path trace_path;
  std::filesystem::path checkpoint_path;
  std::uint64_t completed_steps = 0;
};

namespace detail {

// Keep the header plus the first `steps` rows of an existing trace so a
// resumed run appends exactly where the checkpoint left off.
inline void trim_trace(const std::filesystem::path& path,
                       std::uint64_t steps) {
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    if (!in) {
      std::ofstream out(path, std::ios::trunc);
      out << kTraceHeader << "\n";
      return;
    }
    std::string line;
    while (std::getline(in, line) && keep.size() < steps + 1) {
      keep.push_back(line);
    }
  }
  if (keep.empty()) keep.push_back(kTraceHeader);
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : keep) out << line << "\n";
  if (!out) throw IoError("cannot rewrite trace '" + path.string() + "'");
}

}  // namespace detail

// End-to-end run: build a trainer, optionally restore, step to the end,
// streaming the loss trace to out_dir/trace.csv and leaving the final
// state in out_dir/checkpoint.dkd.
inline RunResult run_distillation(
    Encoder& teacher, Encoder& student, const Corpus& corpus,
    const DistillObjective& obj, const TrainConfig& cfg,
    const std::filesystem::path& out_dir, const std::string& config_json = "{}",
    const std::filesystem::path& resume_from = {}) {
  std::filesystem::create_directories(out_dir);
  Trainer trainer(teacher, student, corpus, obj, cfg);
  RunResult res;
  res.trace_path = out_dir / "trace.csv";
  res.checkpoint_path = out_dir / "checkpoint.dkd";

  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    if (!ck.config_json.empty() && ck.config_json != "{}" &&
        !config_json.empty() && config_json != "{}" &&
        ck.config_json != config_json) {
      throw ConfigError(
          "resume: checkpoint was written under a different config");
    }
    trainer.restore(ck);
    detail::trim_trace(res.trace_path, ck.step);
  } else {
    std::ofstream out(res.trace_path, std::ios::trunc);
    out << kTraceHeader << "\n";
    if (!out) {
      throw IoError("cannot write trace '" + res.trace_path.string() + "'");
    }
  }

  std::uint64_t stop = cfg.total_steps;
  if (cfg.halt_after != 0) {
    stop = std::min<std::uint64_t>(stop, cfg.halt_after);
  }
  std::ofstream trace(res.trace_path, std::ios::app);
  if (!trace) {
    throw IoError("cannot append to trace '" + res.trace_path.string() + "'");
  }
  for (std::uint64_t k = trainer.completed() + 1; k <= stop; ++k) {
    TraceRow row = trainer.step_once();
    trace << format_trace_row(row) << "\n";
    trace.flush();
    res.rows.push_back(row);
    if (cfg.checkpoint_every != 0 && k % cfg.checkpoint_every == 0 &&
        k != stop) {
      save_checkpoint(res.checkpoint_path, trainer.snapshot(config_json));
    }
  }
  save_checkpoint(res.checkpoint_path, trainer.snapshot(config_json));
  res.completed_steps = trainer.completed();
  return res;
}

}  // namespace distillkit
