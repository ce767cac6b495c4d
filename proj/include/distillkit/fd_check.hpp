// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

struct FdParamReport {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
};

struct FdReport {
  std::vector<FdParamReport> params;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool passed() const { return max_rel_err < tol; }
};

// Central-difference gradient check. `f` must rebuild its graph from the
// current parameter values on every call and return the scalar loss; it
// must be deterministic (same values in, same loss out) or the oracle is
// meaningless and an OracleError is thrown. Relative error per entry is
// |analytic - fd| / max(1, |fd|). When a parameter has more entries than
// `max_entries_per_param`, a seeded subset is probed.
inline FdReport fd_check(const std::function<Tensor()>& f,
                         std::vector<NamedParam> params, double eps = 1e-5,
                         double tol = 1e-4,
                         std::size_t max_entries_per_param = 0,
                         std::uint64_t sample_seed = 0) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("fd_check: eps must be in [1e-7, 1e-3]");
  }
  if (params.empty()) throw ContractError("fd_check: no parameters given");

  Tensor probe_a = f();
  double base_a = probe_a.value();
  double base_b = f().value();
  if (!(base_a == base_b)) {
    throw OracleError(
        "fd_check: f is not deterministic at the base point; finite "
        "differences cannot certify gradients (check for seed leakage)");
  }

  Tensor loss = f();
  if (!loss.requires_grad()) {
    throw ContractError("fd_check: loss does not depend on any parameter");
  }
  for (auto& p : params) p.tensor.clear_grad();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  FdReport report;
  report.tol = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::size_t n = p.tensor.numel();
    std::vector<std::size_t> entries;
    if (max_entries_per_param == 0 || n <= max_entries_per_param) {
      entries.resize(n);
      for (std::size_t i = 0; i < n; ++i) entries[i] = i;
    } else {
      RngStream pick = RngStream(sample_seed).split("fd").split(p.name);
      std::vector<char> taken(n, 0);
      while (entries.size() < max_entries_per_param) {
        std::size_t idx = static_cast<std::size_t>(pick.next_below(n));
        if (!taken[idx]) {
          taken[idx] = 1;
          entries.push_back(idx);
        }
      }
      std::sort(entries.begin(), entries.end());
    }

    FdParamReport pr;
    pr.name = p.name;
    pr.entries_checked = entries.size();
    auto vals = p.tensor.mutable_values();
    for (std::size_t idx : entries) {
      double old = vals[idx];
      vals[idx] = old + eps;
      double lp = f().value();
      vals[idx] = old - eps;
      double lm = f().value();
      vals[idx] = old;
      double fd = (lp - lm) / (2.0 * eps);
      double rel =
          std::fabs(analytic[pi][idx] - fd) / std::max(1.0, std::fabs(fd));
      pr.max_rel_err = std::max(pr.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
    report.params.push_back(std::move(pr));
  }
  return report;
}

}  // namespace distillkit
