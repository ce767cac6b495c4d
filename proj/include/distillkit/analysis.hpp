// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "distillkit/ops.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

// ---------------------------------------------------------------------------
// feature pooling
// ---------------------------------------------------------------------------

// Softmax-weighted sum across layer states, the usual way a downstream
// probe consumes a stack of hidden states. Logits are turned into weights
// with a max-subtracted softmax; the combination itself runs through the
// graph, so gradients flow into the states (not into the logits).
inline Tensor weighted_sum_features(const std::vector<Tensor>& states,
                                    const std::vector<double>& logits) {
  if (states.empty()) throw ContractError("weighted sum: no states");
  if (logits.size() != states.size()) {
    throw ContractError("weighted sum: " + std::to_string(logits.size()) +
                        " logits for " + std::to_string(states.size()) +
                        " states");
  }
  for (const auto& s : states) {
    if (s.shape() != states[0].shape()) {
      throw ShapeError("weighted sum: state shapes differ (" +
                       shape_str(s.shape()) + " vs " +
                       shape_str(states[0].shape()) + ")");
    }
  }
  double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp(logits[i] - m);
    z += w[i];
  }
  Tensor out;
  for (std::size_t i = 0; i < states.size(); ++i) {
    Tensor term = scale(states[i], w[i] / z);
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer similarity
// ---------------------------------------------------------------------------

enum class SimilarityKind { cosine, cka };

struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const {
    if (i >= rows || j >= cols) throw ContractError("similarity: index range");
    return values[i * cols + j];
  }
};

namespace detail {

// Stack one layer's frames across all probe items into an (N, D) matrix.
inline std::vector<double> stack_layer(
    const std::vector<std::vector<Tensor>>& states, std::size_t layer,
    std::size_t& n_out, std::size_t& d_out) {
  std::vector<double> out;
  n_out = 0;
  d_out = states[0][layer].dim(1);
  for (const auto& item : states) {
    const Tensor& s = item[layer];
    if (s.rank() != 2 || s.dim(1) != d_out) {
      throw ShapeError("similarity: inconsistent state shape " +
                       shape_str(s.shape()));
    }
    out.insert(out.end(), s.values().begin(), s.values().end());
    n_out += s.dim(0);
  }
  return out;
}

inline void center_columns(std::vector<double>& x, std::size_t n,
                           std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * d + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) x[i * d + j] -= mean;
  }
}

// Frobenius norm of Xt * Y for column matrices X (n x dx), Y (n x dy).
inline double cross_gram_fro(const std::vector<double>& x,
                             const std::vector<double>& y, std::size_t n,
                             std::size_t dx, std::size_t dy) {
  double acc = 0.0;
  std::vector<double> row(dy);
  for (std::size_t a = 0; a < dx; ++a) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double xv = x[i * dx + a];
      if (xv == 0.0) continue;
      const double* yr = y.data() + i * dy;
      for (std::size_t b = 0; b < dy; ++b) row[b] += xv * yr[b];
    }
    for (std::size_t b = 0; b < dy; ++b) acc += row[b] * row[b];
  }
  return std::sqrt(acc);
}

}  // namespace detail

// Pairwise similarity between every layer of `a` and every layer of `b`,
// estimated over a probe set of items ([item][layer] states, rank-2
// (frames, dim) each). Cell (i, j) compares layer i of `a` with layer j
// of `b` over all frames pooled across items.
//
//   cosine: mean per-frame cosine; widths must match.
//   cka:    linear CKA on column-centered features; widths may differ.
//
// A small probe gives noisy estimates, so fewer than `min_items` items is
// rejected outright.
inline SimilarityMatrix layer_similarity(
    const std::vector<std::vector<Tensor>>& a,
    const std::vector<std::vector<Tensor>>& b, SimilarityKind kind,
    std::size_t min_items = 10) {
  if (a.size() != b.size()) {
    throw ContractError("similarity: probe item counts differ");
  }
  if (a.size() < min_items) {
    throw ContractError("similarity: probe needs at least " +
                        std::to_string(min_items) + " items, got " +
                        std::to_string(a.size()));
  }
  std::size_t la = a[0].size(), lb = b[0].size();
  if (la == 0 || lb == 0) throw ContractError("similarity: no layers");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != la || b[i].size() != lb) {
      throw ContractError("similarity: ragged layer lists");
    }
    if (a[i][0].dim(0) != b[i][0].dim(0)) {
      throw ContractError("similarity: frame counts differ on item " +
                          std::to_string(i));
    }
  }

  struct Side {
    std::vector<std::vector<double>> stacked;
    std::size_t n = 0, d = 0;
  };
  auto build = [&](const std::vector<std::vector<Tensor>>& states,
                   std::size_t layers) {
    Side side;
    side.stacked.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      side.stacked[l] = detail::stack_layer(states, l, side.n, side.d);
    }
    return side;
  };
  Side sa = build(a, la), sb = build(b, lb);

  SimilarityMatrix out;
  out.rows = la;
  out.cols = lb;
  out.values.assign(la * lb, 0.0);

  if (kind == SimilarityKind::cosine) {
    if (sa.d != sb.d) {
      throw ContractError("similarity: cosine needs equal widths (" +
                          std::to_string(sa.d) + " vs " +
                          std::to_string(sb.d) + "); use cka");
    }
    for (std::size_t i = 0; i < la; ++i) {
      for (std::size_t j = 0; j < lb; ++j) {
        const auto& x = sa.stacked[i];
        const auto& y = sb.stacked[j];
        double acc = 0.0;
        for (std::size_t f = 0; f < sa.n; ++f) {
          const double* xf = x.data() + f * sa.d;
          const double* yf = y.data() + f * sa.d;
          double dot = 0.0, nx = 0.0, ny = 0.0;
          for (std::size_t c = 0; c < sa.d; ++c) {
            dot += xf[c] * yf[c];
            nx += xf[c] * xf[c];
            ny += yf[c] * yf[c];
          }
          acc += dot / ((std::sqrt(nx) + kCosineNormEpsilon) *
                        (std::sqrt(ny) + kCosineNormEpsilon));
        }
        out.values[i * lb + j] = acc / static_cast<double>(sa.n);
      }
    }
    return out;
  }

  for (auto& m : sa.stacked) detail::center_columns(m, sa.n, sa.d);
  for (auto& m : sb.stacked) detail::center_columns(m, sb.n, sb.d);
  std::vector<double> self_a(la), self_b(lb);
  for (std::size_t i = 0; i < la; ++i) {
    self_a[i] =
        detail::cross_gram_fro(sa.stacked[i], sa.stacked[i], sa.n, sa.d, sa.d);
  }
  for (std::size_t j = 0; j < lb; ++j) {
    self_b[j] =
        detail::cross_gram_fro(sb.stacked[j], sb.stacked[j], sb.n, sb.d, sb.d);
  }
  for (std::size_t i = 0; i < la; ++i) {
    for (std::size_t j = 0; j < lb; ++j) {
      double den = self_a[i] * self_b[j];
      double num = detail::cross_gram_fro(sa.stacked[i], sb.stacked[j], sa.n,
                                          sa.d, sb.d);
      out.values[i * lb + j] = den == 0.0 ? 0.0 : (num * num) / den;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// results tables and rank aggregation
// ---------------------------------------------------------------------------

// A benchmark results table: one row per system, one column per metric,
// plus a direction per metric (+ means higher is better). CSV layout:
//
//   # optional comments
//   system,<metric>,<metric>,...
//   direction,+,-,...
//   <name>,<value>,<value>,...
struct ResultsTable {
  std::vector<std::string> metrics;
  std::vector<int> directions;  // +1 higher-better, -1 lower-better
  std::vector<std::string> systems;
  std::vector<std::vector<double>> values;  // [system][metric]

  static ResultsTable from_stream(std::istream& in, const std::string& where);

  static ResultsTable from_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open table '" + path.string() + "'");
    return from_stream(in, "'" + path.string() + "'");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

inline ResultsTable ResultsTable::from_stream(std::istream& in,
                                              const std::string& where) {
  ResultsTable t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false, have_direction = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string trimmed = line;
    while (!trimmed.empty() &&
           (trimmed.back() == '\r' || trimmed.back() == ' ')) {
      trimmed.pop_back();
    }
    if (trimmed.empty() || trimmed[0] == '#') continue;
    std::vector<std::string> cells = detail::split_csv_line(trimmed);
    if (!have_header) {
      if (cells.size() < 2) {
        throw ParseError("table " + where + ": header needs a system column " +
                         "and at least one metric");
      }
      t.metrics.assign(cells.begin() + 1, cells.end());
      have_header = true;
      continue;
    }
    if (!have_direction) {
      if (cells[0] != "direction" || cells.size() != t.metrics.size() + 1) {
        throw ParseError("table " + where + ": line " +
                         std::to_string(lineno) +
                         " must be the direction row");
      }
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j] == "+") {
          t.directions.push_back(+1);
        } else if (cells[j] == "-") {
          t.directions.push_back(-1);
        } else {
          throw ParseError("table " + where + ": direction for column '" +
                           t.metrics[j - 1] + "' must be + or -, got '" +
                           cells[j] + "'");
        }
      }
      have_direction = true;
      continue;
    }
    if (cells.size() != t.metrics.size() + 1) {
      throw ParseError("table " + where + ": row '" + cells[0] + "' has " +
                       std::to_string(cells.size() - 1) + " values, expected " +
                       std::to_string(t.metrics.size()));
    }
    std::vector<double> row(t.metrics.size());
    for (std::size_t j = 1; j < cells.size(); ++j) {
      try {
        std::size_t used = 0;
        row[j - 1] = std::stod(cells[j], &used);
        if (used != cells[j].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("table " + where + ": row '" + cells[0] +
                         "', column '" + t.metrics[j - 1] +
                         "': bad number '" + cells[j] + "'");
      }
    }
    t.systems.push_back(cells[0]);
    t.values.push_back(std::move(row));
  }
  if (!have_header || !have_direction) {
    throw ParseError("table " + where + ": missing header or direction row");
  }
  if (t.systems.empty()) {
    throw ParseError("table " + where + ": no data rows");
  }
  return t;
}

struct RankSummary {
  std::vector<std::vector<double>> ranks;  // [system][metric], 1 = best
  std::vector<long long> tenths;           // average rank in tenths
  std::vector<double> average;             // tenths / 10
};

// Direction-aware fractional ranking per metric (ties share the average
// of their positions), then the per-system mean rank rounded half away
// from zero to one decimal. Doubled ranks are integers, so the rounding
// runs in exact integer arithmetic:
//   mean = S2 / (2n)  ->  tenths = floor((10 * S2 + n) / (2n))
inline RankSummary aggregate_ranks(const ResultsTable& t) {
  std::size_t n_sys = t.systems.size();
  std::size_t n_met = t.metrics.size();
  if (n_sys == 0 || n_met == 0) throw ContractError("rank: empty table");
  RankSummary out;
  out.ranks.assign(n_sys, std::vector<double>(n_met, 0.0));
  std::vector<long long> s2(n_sys, 0);

  std::vector<std::size_t> order(n_sys);
  for (std::size_t j = 0; j < n_met; ++j) {
    std::iota(order.begin(), order.end(), 0);
    int dir = t.directions[j];
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       double va = t.values[a][j], vb = t.values[b][j];
                       return dir > 0 ? va > vb : va < vb;
                     });
    std::size_t at = 0;
    while (at < n_sys) {
      std::size_t end = at;
      while (end + 1 < n_sys &&
             t.values[order[end + 1]][j] == t.values[order[at]][j]) {
        ++end;
      }
      long long doubled =
          static_cast<long long>(at + 1) + static_cast<long long>(end + 1);
      for (std::size_t k = at; k <= end; ++k) {
        out.ranks[order[k]][j] = static_cast<double>(doubled) / 2.0;
        s2[order[k]] += doubled;
      }
      at = end + 1;
    }
  }

  out.tenths.resize(n_sys);
  out.average.resize(n_sys);
  long long n = static_cast<long long>(n_met);
  for (std::size_t i = 0; i < n_sys; ++i) {
    out.tenths[i] = (10 * s2[i] + n) / (2 * n);
    out.average[i] = static_cast<double>(out.tenths[i]) / 10.0;
  }
  return out;
}

}  // namespace distillkit
