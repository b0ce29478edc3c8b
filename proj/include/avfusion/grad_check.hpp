// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for autodiff gradients. Always runs at
// 64-bit; the forward callable is re-evaluated with gradient recording off,
// so the check is independent of every adjoint rule it verifies.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "avfusion/ops.hpp"
#include "avfusion/tensor.hpp"

namespace avfusion {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  Index worst_index = -1;
  Index count = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  double step = 0.0;
  bool pass = false;
};

/// rel err = |ad - fd| / max(|ad|, |fd|, floor); the floor keeps entries whose
/// true gradient is ~0 from amplifying finite-difference noise.
inline double rel_err(double ad, double fd, double floor = 1e-6) {
  return std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
}

/// Checks d objective / d param for every entry of every named parameter.
/// `objective` must rebuild the forward computation from the live parameter
/// tensors each time it is called and return a scalar.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& objective,
                                  std::vector<std::pair<std::string, Tensor<double>>> params,
                                  double h = 1e-5, double tolerance = 1e-4) {
  GradCheckReport report;
  report.tolerance = tolerance;
  report.step = h;

  for (auto& [name, p] : params) p.zero_grad();
  Tensor<double> loss = objective();
  if (loss.size() != 1) {
    throw ContractError("grad_check: objective returned " + shape_str(loss.shape()) +
                        ", expected a scalar");
  }
  loss.backward();

  std::vector<std::vector<double>> autodiff;
  autodiff.reserve(params.size());
  for (auto& [name, p] : params) {
    autodiff.emplace_back(p.grad().begin(), p.grad().end());
    if (autodiff.back().empty()) autodiff.back().assign(static_cast<std::size_t>(p.size()), 0.0);
  }

  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    GradCheckEntry entry;
    entry.name = name;
    entry.count = p.size();
    auto vals = p.values_mut();
    for (Index i = 0; i < p.size(); ++i) {
      const double saved = vals[static_cast<std::size_t>(i)];
      vals[static_cast<std::size_t>(i)] = saved + h;
      const double up = objective().item();
      vals[static_cast<std::size_t>(i)] = saved - h;
      const double down = objective().item();
      vals[static_cast<std::size_t>(i)] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double ad = autodiff[pi][static_cast<std::size_t>(i)];
      const double re = rel_err(ad, fd);
      if (re > entry.max_rel_err) {
        entry.max_rel_err = re;
        entry.worst_index = i;
      }
      entry.max_abs_err = std::max(entry.max_abs_err, std::abs(ad - fd));
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.params.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace avfusion
