// SPDX-License-Identifier: Apache-2.0
//
// Batch toolkit for dataset-construction bookkeeping: annotator assignment
// scoring, intra/inter-group consistency over cross-check sets, the
// multi-stage vote resolver, Fleiss' kappa, mean opinion scores, and variant
// dataset sampling.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avfusion/errors.hpp"
#include "avfusion/rng.hpp"

namespace avfusion {
namespace annotool {

// ---------------------------------------------------------------------------
// assignment

struct AnnotatorProfile {
  double work_experience = 0.0;   // we
  double msceit = 0.0;            // ms
  double education = 0.0;         // eb
  double culture = 0.0;           // cb
  double leadership = 0.0;        // lp
  std::string gender;             // used by the 2-male/1-female group rule
};

/// p = 0.4*we + 0.3*ms + 0.1*(eb + cb + lp); all inputs in [0, 1].
double assignment_score(const AnnotatorProfile& p);

// ---------------------------------------------------------------------------
// cross-check consistency

struct CrossCheckSample {
  std::string sample_id;
  std::string prior_label;
  std::array<std::string, 3> votes;
};

struct CrossCheckSet {
  std::string set_id;
  std::string category;
  std::string stage;  // "sA" or "sB"
  std::vector<CrossCheckSample> samples;
};

/// S_a = (1/n) * sum_sets (1/(3m)) * sum_samples c_j, where c_j counts the
/// current labels (of 3) matching the prior. Range [0, 1].
double intra_consistency(const std::vector<CrossCheckSet>& sets);

/// Majority of the three current labels, or nullopt for an all-distinct
/// ("more") sample.
std::optional<std::string> majority_of_three(const std::array<std::string, 3>& votes);

/// S_r = (1/c) * sum_i w_i * (0.7*C_i + 0.3*(m - C_i - M_i)) over 9 sets with
/// per-set weight 1/(sets in that category); requires the weight multiset
/// {1/3 x3, 1/2 x2, 1 x4}. C_i counts samples whose resolved label matches
/// the prior, M_i the "more" samples. Range [0, 70] for c = 6.
double inter_consistency(const std::vector<CrossCheckSet>& sets, int categories = 6);

// ---------------------------------------------------------------------------
// vote resolution

struct VoteRecord {
  std::string sample_id;
  std::array<std::string, 3> votes;
  std::array<double, 3> confidences{0.0, 0.0, 0.0};
  std::optional<std::string> leader_vote;
  std::optional<std::string> exchange_vote;  // second leader after exchange
  std::optional<std::string> expert_label;
};

struct Resolution {
  std::string label;
  int stage = 0;  // 1 members, 2 leader, 3 exchanged leader, 4 expert
};

/// Stage 1: >=2 of 3 member votes agree. Stage 2 (all distinct, "more"): add
/// the leader vote; a strictly unique plurality of the 4 decides. Stage 3:
/// add the exchanged leader's vote; >=3 of 5 decides. Stage 4: the expert
/// label is final. Throws when the reached stage's vote is missing.
Resolution resolve_label(const VoteRecord& v);

// ---------------------------------------------------------------------------
// agreement and quality

/// Standard Fleiss' kappa over an items x categories count table with r
/// ratings per item. Throws NumericError when expected agreement is 1.
double fleiss_kappa(const std::vector<std::vector<int>>& table, int raters);

/// Arithmetic mean of expert ratings, each in {1..5}.
double mos_aggregate(const std::vector<int>& ratings);

// ---------------------------------------------------------------------------
// variant sampling

struct ManifestRecord {
  std::string id;
  std::string category;
  double duration = 0.0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::map<std::string, std::int64_t> category_counts() const;
  void validate() const;  // unique ids
};

struct SamplingRules {
  // category -> sample count for the balanced variant; absent categories are
  // taken in full
  std::map<std::string, std::int64_t> balanced_takes = {{"Excitation", 4000},
                                                        {"Neutral", 3000}};
  std::int64_t test_total = 5000;
};

struct VariantManifests {
  DatasetManifest balanced;
  DatasetManifest test;
};

/// Balanced variant: the configured count per capped category plus all
/// remaining samples. Test variant: per-category proportional allocation to
/// exactly test_total via largest-remainder rounding. Both draws are seeded
/// and duplicate-free.
VariantManifests sample_variants(const DatasetManifest& manifest, const SamplingRules& rules,
                                 std::uint64_t seed);

}  // namespace annotool
}  // namespace avfusion
