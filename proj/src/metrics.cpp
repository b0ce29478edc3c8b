// SPDX-License-Identifier: Apache-2.0

#include "avfusion/metrics.hpp"

#include "avfusion/errors.hpp"

namespace avfusion {

nlohmann::json MetricsReport::to_json() const {
  return {{"acc", acc}, {"wa_f1", wa_f1}, {"uar", uar}, {"war", war}, {"confusion", confusion}};
}

MetricsReport compute_metrics(const std::vector<std::int64_t>& preds,
                              const std::vector<std::int64_t>& labels, int classes) {
  if (preds.empty()) throw ContractError("metrics: empty input");
  if (preds.size() != labels.size()) {
    throw ContractError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  }
  if (classes < 1) throw ContractError("metrics: classes must be >= 1");

  MetricsReport r;
  r.confusion.assign(static_cast<std::size_t>(classes),
                     std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0));
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::int64_t y = labels[i], p = preds[i];
    if (y < 0 || y >= classes || p < 0 || p >= classes) {
      throw ContractError("metrics: class index outside [0, " + std::to_string(classes) + ")");
    }
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    if (y == p) ++correct;
  }
  const double n = static_cast<double>(preds.size());
  r.acc = static_cast<double>(correct) / n;

  double f1_weighted = 0.0, recall_sum = 0.0, recall_weighted = 0.0;
  for (int c = 0; c < classes; ++c) {
    std::int64_t tp = r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    std::int64_t support = 0, predicted = 0;
    for (int j = 0; j < classes; ++j) {
      support += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      predicted += r.confusion[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
    }
    const double precision = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
    const double recall = support > 0 ? static_cast<double>(tp) / support : 0.0;
    const double f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    f1_weighted += f1 * static_cast<double>(support);
    recall_weighted += recall * static_cast<double>(support);
    recall_sum += recall;
  }
  r.wa_f1 = f1_weighted / n;
  r.war = recall_weighted / n;
  r.uar = recall_sum / classes;
  return r;
}

}  // namespace avfusion
