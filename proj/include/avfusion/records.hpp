// SPDX-License-Identifier: Apache-2.0
//
// File ingestion for the annotation toolkit. Records arrive as line-delimited
// JSON objects or CSV rows with the columns
//   sample_id, set_id, category, stage, prior_label,
//   vote1..vote3, conf1..conf3, leader_vote, exchange_vote, expert_label
// (set_id/category matter for consistency grouping; empty optional cells mean
// absent). Manifests are JSON arrays or CSV with id, category, duration.

#pragma once

#include <string>
#include <vector>

#include "avfusion/annotool.hpp"

namespace avfusion {
namespace annotool {

struct AnnotationRecord {
  std::string sample_id;
  std::string set_id;
  std::string category;
  std::string stage;
  std::string prior_label;
  VoteRecord vote;
};

/// Reads .jsonl or .csv by extension.
std::vector<AnnotationRecord> read_records(const std::string& path);

/// Groups records into cross-check sets by set_id (insertion order kept).
std::vector<CrossCheckSet> group_into_sets(const std::vector<AnnotationRecord>& records);

/// Reads a manifest from .json (array of objects) or .csv.
DatasetManifest read_manifest(const std::string& path);

void write_manifest_json(const std::string& path, const DatasetManifest& manifest);

}  // namespace annotool
}  // namespace avfusion
