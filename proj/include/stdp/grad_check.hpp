// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "stdp/autodiff.hpp"
#include "stdp/params.hpp"

namespace stdp {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error, so near-zero gradients are
  /// compared on an absolute scale.
  double floor = 1e-3;
  double tolerance = 1e-3;
  /// Cap on perturbed entries per parameter (0 = all), taken evenly spaced.
  std::size_t max_entries = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Central finite-difference check of reverse-mode gradients.
///
/// `build(tape, params)` must bind the parameters it uses with
/// `tape.leaf(p.value, &p.grad)` and return a scalar. It is re-run for every
/// perturbation, so it has to be deterministic (no dropout, frozen samples).
template <class Build>
GradCheckReport grad_check(Build&& build, ParameterSet<double>& params, const GradCheckOptions& opt = {}) {
  params.zero_grad();
  {
    ad::Tape<double> tape;
    auto loss = build(tape, params);
    tape.backward(loss);
  }
  auto eval = [&] {
    ad::Tape<double> tape;
    return build(tape, params).value().item();
  };
  GradCheckReport report;
  for (auto& p : params) {
    GradCheckEntry entry{p.name, 0, 0.0};
    const std::size_t n = p.value.size();
    const std::size_t stride = (opt.max_entries == 0 || n <= opt.max_entries) ? 1 : n / opt.max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + opt.step;
      const double up = eval();
      p.value[i] = saved - opt.step;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      double err = relative_error(p.grad[i], numeric, opt.floor);
      if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error <= opt.tolerance;
  return report;
}

}  // namespace stdp
