// SPDX-License-Identifier: Apache-2.0

#include "avfusion/annotool.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace avfusion {
namespace annotool {

double assignment_score(const AnnotatorProfile& p) {
  const double inputs[] = {p.work_experience, p.msceit, p.education, p.culture, p.leadership};
  for (double v : inputs) {
    if (v < 0.0 || v > 1.0) {
      throw ContractError("assignment_score: profile scores must lie in [0, 1]");
    }
  }
  return 0.4 * p.work_experience + 0.3 * p.msceit +
         0.1 * (p.education + p.culture + p.leadership);
}

double intra_consistency(const std::vector<CrossCheckSet>& sets) {
  if (sets.empty()) throw ContractError("intra_consistency: no sets");
  double acc = 0.0;
  for (const auto& set : sets) {
    if (set.samples.empty()) {
      throw ContractError("intra_consistency: set '" + set.set_id + "' has no samples");
    }
    long matches = 0;
    for (const auto& s : set.samples) {
      for (const auto& vote : s.votes) {
        if (vote == s.prior_label) ++matches;
      }
    }
    acc += static_cast<double>(matches) / (3.0 * static_cast<double>(set.samples.size()));
  }
  return acc / static_cast<double>(sets.size());
}

std::optional<std::string> majority_of_three(const std::array<std::string, 3>& votes) {
  if (votes[0] == votes[1] || votes[0] == votes[2]) return votes[0];
  if (votes[1] == votes[2]) return votes[1];
  return std::nullopt;
}

double inter_consistency(const std::vector<CrossCheckSet>& sets, int categories) {
  if (sets.size() != 9) {
    throw ConfigError("inter_consistency: expected 9 sets, got " + std::to_string(sets.size()));
  }
  if (categories < 1) throw ConfigError("inter_consistency: categories must be >= 1");

  std::map<std::string, int> sets_per_category;
  for (const auto& set : sets) ++sets_per_category[set.category];
  // weight multiset must be {1/3 x3, 1/2 x2, 1 x4}
  std::multiset<int> counts;
  for (const auto& [cat, n] : sets_per_category) counts.insert(n);
  if (counts != std::multiset<int>{3, 2, 1, 1, 1, 1}) {
    std::string got;
    for (const auto& [cat, n] : sets_per_category) {
      got += cat + ":" + std::to_string(n) + " ";
    }
    throw ConfigError("inter_consistency: per-category set counts must be {3,2,1,1,1,1}, got " +
                      got);
  }

  // w_i = 1/(sets in category); summing per category first and dividing once
  // keeps the stated extremes exact in floating point
  std::map<std::string, double> per_category;
  for (const auto& set : sets) {
    if (set.samples.empty()) {
      throw ContractError("inter_consistency: set '" + set.set_id + "' has no samples");
    }
    long consistent = 0, more = 0;
    for (const auto& s : set.samples) {
      const auto resolved = majority_of_three(s.votes);
      if (!resolved) {
        ++more;
      } else if (*resolved == s.prior_label) {
        ++consistent;
      }
    }
    const double m = static_cast<double>(set.samples.size());
    per_category[set.category] +=
        0.7 * static_cast<double>(consistent) +
        0.3 * (m - static_cast<double>(consistent) - static_cast<double>(more));
  }
  double acc = 0.0;
  for (const auto& [category, sum] : per_category) {
    acc += sum / sets_per_category[category];
  }
  return acc / static_cast<double>(categories);
}

Resolution resolve_label(const VoteRecord& v) {
  for (const auto& vote : v.votes) {
    if (vote.empty()) throw ContractError("resolve_label: empty member vote");
  }
  // stage 1: majority of the three members
  if (auto m = majority_of_three(v.votes)) return {*m, 1};

  // stage 2: all three distinct ("more"); the leader joins
  if (!v.leader_vote) {
    throw ContractError("resolve_label: sample '" + v.sample_id +
                        "' reached stage 2 but has no leader vote");
  }
  std::map<std::string, int> tally;
  for (const auto& vote : v.votes) ++tally[vote];
  ++tally[*v.leader_vote];
  int best = 0;
  bool unique = false;
  std::string best_label;
  for (const auto& [label, n] : tally) {
    if (n > best) {
      best = n;
      best_label = label;
      unique = true;
    } else if (n == best) {
      unique = false;
    }
  }
  if (unique) return {best_label, 2};

  // stage 3: exchanged leader; a clear majority is >= 3 of 5
  if (!v.exchange_vote) {
    throw ContractError("resolve_label: sample '" + v.sample_id +
                        "' reached stage 3 but has no exchanged-leader vote");
  }
  ++tally[*v.exchange_vote];
  for (const auto& [label, n] : tally) {
    if (n >= 3) return {label, 3};
  }

  // stage 4: expert re-review is final
  if (!v.expert_label) {
    throw ContractError("resolve_label: sample '" + v.sample_id +
                        "' reached stage 4 but has no expert label");
  }
  return {*v.expert_label, 4};
}

double fleiss_kappa(const std::vector<std::vector<int>>& table, int raters) {
  if (table.empty()) throw ContractError("fleiss_kappa: empty table");
  if (raters < 2) throw ContractError("fleiss_kappa: need at least 2 raters");
  const std::size_t categories = table[0].size();
  if (categories < 1) throw ContractError("fleiss_kappa: no categories");

  const double n = static_cast<double>(table.size());
  const double r = static_cast<double>(raters);
  std::vector<double> category_mass(categories, 0.0);
  double p_bar = 0.0;
  for (const auto& item : table) {
    if (item.size() != categories) {
      throw ContractError("fleiss_kappa: ragged table");
    }
    int rowsum = 0;
    double sq = 0.0;
    for (std::size_t c = 0; c < categories; ++c) {
      if (item[c] < 0) throw ContractError("fleiss_kappa: negative count");
      rowsum += item[c];
      sq += static_cast<double>(item[c]) * item[c];
      category_mass[c] += item[c];
    }
    if (rowsum != raters) {
      throw ContractError("fleiss_kappa: item row sums to " + std::to_string(rowsum) +
                          ", expected " + std::to_string(raters));
    }
    p_bar += (sq - r) / (r * (r - 1.0));
  }
  p_bar /= n;

  double p_e = 0.0;
  for (double mass : category_mass) {
    const double p = mass / (n * r);
    p_e += p * p;
  }
  if (p_e >= 1.0) {
    throw NumericError("fleiss_kappa: expected agreement is 1 (all mass in one category); "
                       "kappa is undefined");
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

double mos_aggregate(const std::vector<int>& ratings) {
  if (ratings.empty()) throw ContractError("mos_aggregate: no ratings");
  double acc = 0.0;
  for (int r : ratings) {
    if (r < 1 || r > 5) {
      throw ContractError("mos_aggregate: rating " + std::to_string(r) + " outside {1..5}");
    }
    acc += r;
  }
  return acc / static_cast<double>(ratings.size());
}

std::map<std::string, std::int64_t> DatasetManifest::category_counts() const {
  std::map<std::string, std::int64_t> counts;
  for (const auto& r : records) ++counts[r.category];
  return counts;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.id.empty()) throw ConfigError("manifest: record with empty id");
    if (!ids.insert(r.id).second) throw ConfigError("manifest: duplicate id '" + r.id + "'");
  }
}

namespace {

/// First k of a seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

VariantManifests sample_variants(const DatasetManifest& manifest, const SamplingRules& rules,
                                 std::uint64_t seed) {
  manifest.validate();
  if (rules.test_total < 0) throw ConfigError("sample_variants: negative test_total");

  std::map<std::string, std::vector<const ManifestRecord*>> pools;
  for (const auto& r : manifest.records) pools[r.category].push_back(&r);

  const std::int64_t total = static_cast<std::int64_t>(manifest.records.size());
  if (rules.test_total > total) {
    throw ConfigError("sample_variants: test_total " + std::to_string(rules.test_total) +
                      " exceeds manifest size " + std::to_string(total));
  }

  Rng rng(seed);
  VariantManifests out;

  // balanced variant: capped categories are sampled, the rest taken in full
  for (const auto& [category, pool] : pools) {
    const auto it = rules.balanced_takes.find(category);
    if (it == rules.balanced_takes.end()) {
      for (const auto* r : pool) out.balanced.records.push_back(*r);
      continue;
    }
    if (it->second > static_cast<std::int64_t>(pool.size())) {
      throw ConfigError("sample_variants: category '" + category + "' has " +
                        std::to_string(pool.size()) + " samples, needs " +
                        std::to_string(it->second));
    }
    for (std::size_t i :
         draw_without_replacement(pool.size(), static_cast<std::size_t>(it->second), rng)) {
      out.balanced.records.push_back(*pool[i]);
    }
  }

  // test variant: proportional allocation, largest-remainder rounding
  struct Quota {
    std::string category;
    std::int64_t take;
    std::int64_t remainder;  // of test_total * count mod total
  };
  std::vector<Quota> quotas;
  std::int64_t assigned = 0;
  for (const auto& [category, pool] : pools) {
    const std::int64_t count = static_cast<std::int64_t>(pool.size());
    const std::int64_t numer = rules.test_total * count;
    quotas.push_back({category, numer / total, numer % total});
    assigned += numer / total;
  }
  std::stable_sort(quotas.begin(), quotas.end(), [](const Quota& a, const Quota& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    return a.category < b.category;  // deterministic tie-break
  });
  for (std::size_t i = 0; assigned < rules.test_total; ++i, ++assigned) {
    ++quotas[i % quotas.size()].take;
  }
  for (const auto& q : quotas) {
    const auto& pool = pools[q.category];
    if (q.take > static_cast<std::int64_t>(pool.size())) {
      throw ConfigError("sample_variants: test quota for '" + q.category +
                        "' exceeds available samples");
    }
    for (std::size_t i :
         draw_without_replacement(pool.size(), static_cast<std::size_t>(q.take), rng)) {
      out.test.records.push_back(*pool[i]);
    }
  }

  out.balanced.validate();
  out.test.validate();
  return out;
}

}  // namespace annotool
}  // namespace avfusion
