// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace avfusion {

/// Classification report. Rates are fractions in [0, 1]; confusion rows are
/// true classes, columns predictions. WAR equals ACC by definition.
struct MetricsReport {
  double acc = 0.0;
  double wa_f1 = 0.0;
  double uar = 0.0;
  double war = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;

  nlohmann::json to_json() const;
};

/// ACC, support-weighted F1, unweighted/weighted average recall, and the
/// confusion matrix over `classes` categories. Per-class F1 with an empty
/// denominator is 0; classes absent from the labels contribute zero support.
MetricsReport compute_metrics(const std::vector<std::int64_t>& preds,
                              const std::vector<std::int64_t>& labels, int classes);

}  // namespace avfusion
