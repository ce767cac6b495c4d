// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "distillkit/model.hpp"
#include "distillkit/ops.hpp"
#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

// ---------------------------------------------------------------------------
// layer mappings
// ---------------------------------------------------------------------------

enum class MappingKind {
  all_layers,     // every teacher layer in order
  stride,         // teacher layers k, 2k, 3k, ...
  explicit_list,  // caller-supplied ascending teacher layers
  random_n_of_m,  // fresh sorted n-of-m draw per realization
};

enum class PairingMode {
  l2l,   // student layer i pairs with the i-th selected teacher layer
  pred,  // every selected teacher layer pairs with the student's top layer
};

struct MappingStrategy {
  MappingKind kind = MappingKind::all_layers;
  std::size_t teacher_depth = 0;
  std::size_t student_depth = 0;
  std::size_t stride = 0;                // for kind == stride
  std::vector<std::size_t> layers;       // for kind == explicit_list

  static MappingStrategy all(std::size_t teacher, std::size_t student) {
    return {MappingKind::all_layers, teacher, student, 0, {}};
  }
  static MappingStrategy strided(std::size_t teacher, std::size_t student,
                                 std::size_t k) {
    return {MappingKind::stride, teacher, student, k, {}};
  }
  static MappingStrategy explicit_layers(std::size_t teacher,
                                         std::size_t student,
                                         std::vector<std::size_t> layers) {
    return {MappingKind::explicit_list, teacher, student, 0, std::move(layers)};
  }
  static MappingStrategy random(std::size_t teacher, std::size_t student) {
    return {MappingKind::random_n_of_m, teacher, student, 0, {}};
  }
};

// Concrete pairs of (student_layer, teacher_layer), both 1-based.
struct LayerMap {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

namespace detail {

inline std::vector<std::size_t> select_teacher_layers(
    const MappingStrategy& s, PairingMode mode, RngStream* rng) {
  if (s.teacher_depth == 0 || s.student_depth == 0) {
    throw ConfigError("mapping: teacher/student depth must be positive");
  }
  switch (s.kind) {
    case MappingKind::all_layers: {
      std::vector<std::size_t> out(s.teacher_depth);
      for (std::size_t i = 0; i < s.teacher_depth; ++i) out[i] = i + 1;
      return out;
    }
    case MappingKind::stride: {
      if (s.stride == 0) throw ConfigError("mapping: stride must be >= 1");
      std::vector<std::size_t> out;
      if (mode == PairingMode::l2l) {
        // one pick per student layer
        if (s.student_depth * s.stride > s.teacher_depth) {
          throw ConfigError(
              "mapping: stride " + std::to_string(s.stride) + " with " +
              std::to_string(s.student_depth) +
              " student layers overruns a teacher of depth " +
              std::to_string(s.teacher_depth));
        }
        for (std::size_t i = 1; i <= s.student_depth; ++i)
          out.push_back(i * s.stride);
      } else {
        for (std::size_t l = s.stride; l <= s.teacher_depth; l += s.stride)
          out.push_back(l);
      }
      return out;
    }
    case MappingKind::explicit_list: {
      if (s.layers.empty()) throw ConfigError("mapping: empty explicit list");
      for (std::size_t i = 0; i < s.layers.size(); ++i) {
        if (s.layers[i] < 1 || s.layers[i] > s.teacher_depth) {
          throw ConfigError("mapping: layer " + std::to_string(s.layers[i]) +
                            " outside teacher depth " +
                            std::to_string(s.teacher_depth));
        }
        if (i > 0 && s.layers[i] <= s.layers[i - 1]) {
          throw ConfigError("mapping: explicit layers must be ascending");
        }
      }
      return s.layers;
    }
    case MappingKind::random_n_of_m: {
      if (mode != PairingMode::l2l) {
        throw ConfigError("mapping: random n-of-m is a layer-to-layer rule");
      }
      if (s.student_depth > s.teacher_depth) {
        throw ConfigError("mapping: cannot draw " +
                          std::to_string(s.student_depth) + " of " +
                          std::to_string(s.teacher_depth) + " teacher layers");
      }
      if (rng == nullptr) {
        throw ContractError("mapping: random n-of-m needs an rng stream");
      }
      // partial Fisher-Yates over 1..m gives a uniform n-subset
      std::vector<std::size_t> pool(s.teacher_depth);
      for (std::size_t i = 0; i < s.teacher_depth; ++i) pool[i] = i + 1;
      for (std::size_t i = 0; i < s.student_depth; ++i) {
        std::size_t j =
            i + static_cast<std::size_t>(rng->next_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
      }
      std::vector<std::size_t> out(pool.begin(),
                                   pool.begin() + s.student_depth);
      std::sort(out.begin(), out.end());
      return out;
    }
  }
  throw ConfigError("mapping: unknown kind");
}

}  // namespace detail

// Realize a strategy into concrete pairs. For l2l pairing the selection
// count must equal the student depth and student layers run 1..S in
// order; for pred pairing every selected teacher layer maps to the
// student's top layer.
inline LayerMap realize_mapping(const MappingStrategy& s,
                                RngStream* rng = nullptr,
                                PairingMode mode = PairingMode::l2l) {
  std::vector<std::size_t> teachers =
      detail::select_teacher_layers(s, mode, rng);
  LayerMap map;
  if (mode == PairingMode::l2l) {
    if (teachers.size() != s.student_depth) {
      throw ConfigError("mapping: selected " +
                        std::to_string(teachers.size()) +
                        " teacher layers for a student of depth " +
                        std::to_string(s.student_depth));
    }
    for (std::size_t i = 0; i < teachers.size(); ++i) {
      map.pairs.push_back({i + 1, teachers[i]});
    }
  } else {
    for (std::size_t t : teachers) map.pairs.push_back({s.student_depth, t});
  }
  return map;
}

// ---------------------------------------------------------------------------
// pair loss
// ---------------------------------------------------------------------------

// Per-pair distillation loss over aligned (frames, dim) representations:
//   mean |s - t|  -  lambda * mean_f log sigmoid(cos(s_f, t_f))
// Minimizing drives the L1 term down and the per-frame cosine toward 1;
// the floor is -lambda * log sigmoid(1), attained at equality.
inline Tensor pair_loss(const Tensor& student, const Tensor& teacher,
                        double lambda_cos) {
  if (student.rank() != 2 || teacher.rank() != 2) {
    throw ShapeError("pair_loss: inputs must be (frames, dim)");
  }
  if (student.shape() != teacher.shape()) {
    throw ShapeError("pair_loss: student " + shape_str(student.shape()) +
                     " vs teacher " + shape_str(teacher.shape()));
  }
  if (student.dim(0) == 0) throw ShapeError("pair_loss: empty time axis");
  if (lambda_cos < 0.0) throw ConfigError("pair_loss: lambda_cos must be >= 0");
  Tensor l1 = l1_distance(student, teacher);
  if (lambda_cos == 0.0) return l1;
  Tensor cos_term = mean_all(log_sigmoid(cosine_similarity(student, teacher)));
  return add(l1, scale(cos_term, -lambda_cos));
}

inline double pair_loss_floor(double lambda_cos) {
  // -lambda * log sigmoid(1)
  return lambda_cos * 0.31326168751822286;
}

// ---------------------------------------------------------------------------
// objectives
// ---------------------------------------------------------------------------

enum class KdKind { pred, pred_all, l2l, l2l_n_of_m, combined };

inline const char* kd_kind_name(KdKind k) {
  switch (k) {
    case KdKind::pred: return "pred";
    case KdKind::pred_all: return "pred_all";
    case KdKind::l2l: return "l2l";
    case KdKind::l2l_n_of_m: return "l2l_n_of_m";
    case KdKind::combined: return "combined";
  }
  return "?";
}

struct DistillObjective {
  KdKind kind = KdKind::pred;
  double lambda_cos = 1.0;
  double pred_weight = 0.8;  // only read for combined
  double l2l_weight = 0.2;   // only read for combined
  MappingStrategy pred_targets;  // pred / pred_all / combined
  MappingStrategy l2l_map;       // l2l / l2l_n_of_m / combined

  bool uses_pred() const {
    return kind == KdKind::pred || kind == KdKind::pred_all ||
           kind == KdKind::combined;
  }
  bool uses_l2l() const {
    return kind == KdKind::l2l || kind == KdKind::l2l_n_of_m ||
           kind == KdKind::combined;
  }

  void validate() const {
    if (lambda_cos < 0.0) throw ConfigError("kd: lambda_cos must be >= 0");
    if (kind == KdKind::combined) {
      if (pred_weight < 0.0 || l2l_weight < 0.0 ||
          std::fabs(pred_weight + l2l_weight - 1.0) > 1e-12) {
        throw ConfigError("kd: combined weights must be >= 0 and sum to 1");
      }
    }
  }
};

// Per-item hidden states for one model: states[item][layer] is (F_i, D).
using ItemStates = std::vector<std::vector<Tensor>>;

namespace detail {

inline void check_same_item_count(const ItemStates& a, const ItemStates& b,
                                  const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw ContractError(std::string(what) + ": item count mismatch");
  }
}

}  // namespace detail

// Prediction-layer objective: per-target heads read the student's top
// layer and regress the chosen teacher layers. Teacher states must be
// constants (no gradient may reach the teacher).
inline Tensor pred_objective(const Encoder& student,
                             const ItemStates& student_states,
                             const ItemStates& teacher_states,
                             const std::vector<std::size_t>& target_layers,
                             double lambda_cos) {
  detail::check_same_item_count(student_states, teacher_states, "pred");
  if (target_layers.empty()) throw ConfigError("pred: no target layers");
  if (student.head_count() != target_layers.size()) {
    throw ConfigError("pred: " + std::to_string(target_layers.size()) +
                      " targets but " + std::to_string(student.head_count()) +
                      " heads attached");
  }
  std::vector<Tensor> per_item;
  per_item.reserve(student_states.size());
  for (std::size_t it = 0; it < student_states.size(); ++it) {
    const Tensor& top = student_states[it].back();
    std::vector<Tensor> per_target;
    per_target.reserve(target_layers.size());
    for (std::size_t j = 0; j < target_layers.size(); ++j) {
      std::size_t tl = target_layers[j];
      if (tl < 1 || tl > teacher_states[it].size()) {
        throw ConfigError("pred: target layer " + std::to_string(tl) +
                          " outside teacher depth " +
                          std::to_string(teacher_states[it].size()));
      }
      const Tensor& target = teacher_states[it][tl - 1];
      if (target.requires_grad()) {
        throw ContractError("pred: teacher states must be detached");
      }
      per_target.push_back(
          pair_loss(student.apply_head(j, top), target, lambda_cos));
    }
    per_item.push_back(mean_scalars(per_target));
  }
  return mean_scalars(per_item);
}

// Layer-to-layer objective over a realized map. Projections bridge a
// width difference; when the widths already match and no projections are
// attached, raw states are compared directly.
inline Tensor l2l_objective(const Encoder& student,
                            const ItemStates& student_states,
                            const ItemStates& teacher_states,
                            const LayerMap& map, double lambda_cos) {
  detail::check_same_item_count(student_states, teacher_states, "l2l");
  if (map.pairs.empty()) throw ConfigError("l2l: empty layer map");
  bool has_proj = student.projection_count() > 0;
  if (has_proj && student.projection_count() != map.pairs.size()) {
    throw ConfigError("l2l: " + std::to_string(map.pairs.size()) +
                      " mapped layers but " +
                      std::to_string(student.projection_count()) +
                      " projections attached");
  }
  std::vector<Tensor> per_item;
  per_item.reserve(student_states.size());
  for (std::size_t it = 0; it < student_states.size(); ++it) {
    std::vector<Tensor> per_pair;
    per_pair.reserve(map.pairs.size());
    for (std::size_t pi = 0; pi < map.pairs.size(); ++pi) {
      auto [sl, tl] = map.pairs[pi];
      if (sl < 1 || sl > student_states[it].size()) {
        throw ConfigError("l2l: student layer " + std::to_string(sl) +
                          " out of range");
      }
      if (tl < 1 || tl > teacher_states[it].size()) {
        throw ConfigError("l2l: teacher layer " + std::to_string(tl) +
                          " out of range");
      }
      const Tensor& target = teacher_states[it][tl - 1];
      if (target.requires_grad()) {
        throw ContractError("l2l: teacher states must be detached");
      }
      Tensor s = student_states[it][sl - 1];
      if (has_proj) {
        s = student.apply_projection(pi, s);
      } else if (s.dim(1) != target.dim(1)) {
        throw ConfigError(
            "l2l: student width " + std::to_string(s.dim(1)) +
            " differs from teacher width " + std::to_string(target.dim(1)) +
            " and no projections are attached");
      }
      per_pair.push_back(pair_loss(s, target, lambda_cos));
    }
    per_item.push_back(mean_scalars(per_pair));
  }
  return mean_scalars(per_item);
}

// Scalar breakdown of one objective evaluation for the loss trace.
struct ObjectiveEval {
  Tensor loss;
  double pred_term = 0.0;
  double l2l_term = 0.0;
};

// Evaluate the configured objective on already-computed states. For
// l2l_n_of_m a fresh map is drawn from `nofm` per call (i.e. per batch).
inline ObjectiveEval evaluate_objective(const Encoder& student,
                                        const ItemStates& student_states,
                                        const ItemStates& teacher_states,
                                        const DistillObjective& obj,
                                        RngStream* nofm = nullptr) {
  obj.validate();
  ObjectiveEval ev;
  Tensor pred, l2l;
  if (obj.uses_pred()) {
    MappingStrategy pstrat = obj.pred_targets;
    if (obj.kind == KdKind::pred_all) pstrat.kind = MappingKind::all_layers;
    LayerMap pmap = realize_mapping(pstrat, nullptr, PairingMode::pred);
    std::vector<std::size_t> targets;
    targets.reserve(pmap.pairs.size());
    for (auto& [sl, tl] : pmap.pairs) targets.push_back(tl);
    pred = pred_objective(student, student_states, teacher_states, targets,
                          obj.lambda_cos);
    ev.pred_term = pred.value();
  }
  if (obj.uses_l2l()) {
    MappingStrategy strat = obj.l2l_map;
    if (obj.kind == KdKind::l2l_n_of_m) strat.kind = MappingKind::random_n_of_m;
    LayerMap map = realize_mapping(strat, nofm, PairingMode::l2l);
    l2l = l2l_objective(student, student_states, teacher_states, map,
                        obj.lambda_cos);
    ev.l2l_term = l2l.value();
  }
  if (obj.kind == KdKind::combined) {
    ev.loss = add(scale(pred, obj.pred_weight), scale(l2l, obj.l2l_weight));
  } else if (obj.uses_pred()) {
    ev.loss = pred;
  } else {
    ev.loss = l2l;
  }
  return ev;
}

}  // namespace distillkit
