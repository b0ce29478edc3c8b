// SPDX-License-Identifier: Apache-2.0

#include "avfusion/records.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace avfusion {
namespace annotool {

namespace {

using nlohmann::json;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  // simple CSV: comma-separated, double-quote escaping
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

AnnotationRecord record_from_json(const json& j, std::size_t line_no) {
  AnnotationRecord r;
  try {
    r.sample_id = j.value("sample_id", "");
    r.set_id = j.value("set_id", "");
    r.category = j.value("category", "");
    r.stage = j.value("stage", "");
    r.prior_label = j.value("prior_label", "");
    r.vote.sample_id = r.sample_id;
    const auto& votes = j.at("votes");
    if (!votes.is_array() || votes.size() != 3) {
      throw ConfigError("records: line " + std::to_string(line_no) +
                        ": 'votes' must be an array of 3 labels");
    }
    for (std::size_t i = 0; i < 3; ++i) r.vote.votes[i] = votes[i].get<std::string>();
    if (j.contains("confidences")) {
      const auto& conf = j.at("confidences");
      if (!conf.is_array() || conf.size() != 3) {
        throw ConfigError("records: line " + std::to_string(line_no) +
                          ": 'confidences' must be an array of 3 numbers");
      }
      for (std::size_t i = 0; i < 3; ++i) r.vote.confidences[i] = conf[i].get<double>();
    }
    if (j.contains("leader_vote") && !j.at("leader_vote").is_null()) {
      r.vote.leader_vote = j.at("leader_vote").get<std::string>();
    }
    if (j.contains("exchange_vote") && !j.at("exchange_vote").is_null()) {
      r.vote.exchange_vote = j.at("exchange_vote").get<std::string>();
    }
    if (j.contains("expert_label") && !j.at("expert_label").is_null()) {
      r.vote.expert_label = j.at("expert_label").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError("records: line " + std::to_string(line_no) + ": " + e.what());
  }
  return r;
}

}  // namespace

std::vector<AnnotationRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("records: cannot open '" + path + "'");

  std::vector<AnnotationRecord> out;
  std::string line;
  std::size_t line_no = 0;

  if (ends_with(path, ".csv")) {
    if (!std::getline(in, line)) throw ConfigError("records: '" + path + "' is empty");
    ++line_no;
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const auto& name : {"sample_id", "prior_label", "vote1", "vote2", "vote3"}) {
      if (!col.count(name)) {
        throw ConfigError("records: '" + path + "' is missing required column '" +
                          std::string(name) + "'");
      }
    }
    auto cell = [&](const std::vector<std::string>& row, const std::string& name) -> std::string {
      auto it = col.find(name);
      if (it == col.end() || it->second >= row.size()) return "";
      return row[it->second];
    };
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto row = split_csv_line(line);
      AnnotationRecord r;
      r.sample_id = cell(row, "sample_id");
      r.set_id = cell(row, "set_id");
      r.category = cell(row, "category");
      r.stage = cell(row, "stage");
      r.prior_label = cell(row, "prior_label");
      r.vote.sample_id = r.sample_id;
      r.vote.votes = {cell(row, "vote1"), cell(row, "vote2"), cell(row, "vote3")};
      for (std::size_t i = 0; i < 3; ++i) {
        const std::string c = cell(row, "conf" + std::to_string(i + 1));
        if (!c.empty()) {
          try {
            r.vote.confidences[i] = std::stod(c);
          } catch (const std::exception&) {
            throw ConfigError("records: line " + std::to_string(line_no) +
                              ": bad confidence '" + c + "'");
          }
        }
      }
      if (const std::string v = cell(row, "leader_vote"); !v.empty()) r.vote.leader_vote = v;
      if (const std::string v = cell(row, "exchange_vote"); !v.empty()) r.vote.exchange_vote = v;
      if (const std::string v = cell(row, "expert_label"); !v.empty()) r.vote.expert_label = v;
      out.push_back(std::move(r));
    }
    return out;
  }

  // default: line-delimited JSON
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError("records: line " + std::to_string(line_no) + " of '" + path +
                        "': " + e.what());
    }
    out.push_back(record_from_json(j, line_no));
  }
  return out;
}

std::vector<CrossCheckSet> group_into_sets(const std::vector<AnnotationRecord>& records) {
  std::vector<CrossCheckSet> sets;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    if (r.set_id.empty()) {
      throw ConfigError("records: sample '" + r.sample_id +
                        "' has no set_id; consistency grouping needs one");
    }
    if (r.prior_label.empty()) {
      throw ConfigError("records: sample '" + r.sample_id + "' has no prior_label");
    }
    auto it = index.find(r.set_id);
    if (it == index.end()) {
      index.emplace(r.set_id, sets.size());
      sets.push_back(CrossCheckSet{r.set_id, r.category, r.stage, {}});
      it = index.find(r.set_id);
    }
    auto& set = sets[it->second];
    if (set.category != r.category) {
      throw ConfigError("records: set '" + r.set_id + "' mixes categories '" + set.category +
                        "' and '" + r.category + "'");
    }
    set.samples.push_back(CrossCheckSample{r.sample_id, r.prior_label, r.vote.votes});
  }
  return sets;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest: cannot open '" + path + "'");
  DatasetManifest m;

  if (ends_with(path, ".csv")) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("manifest: '" + path + "' is empty");
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    if (!col.count("id") || !col.count("category")) {
      throw ConfigError("manifest: '" + path + "' needs id and category columns");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto row = split_csv_line(line);
      if (row.size() <= std::max(col["id"], col["category"])) {
        throw ConfigError("manifest: line " + std::to_string(line_no) + " of '" + path +
                          "' has too few columns");
      }
      ManifestRecord r;
      r.id = row[col["id"]];
      r.category = row[col["category"]];
      if (col.count("duration") && col["duration"] < row.size() &&
          !row[col["duration"]].empty()) {
        r.duration = std::stod(row[col["duration"]]);
      }
      m.records.push_back(std::move(r));
    }
  } else {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("manifest: '" + path + "': " + e.what());
    }
    const json& arr = j.is_array() ? j : j.at("records");
    for (const auto& item : arr) {
      ManifestRecord r;
      r.id = item.at("id").get<std::string>();
      r.category = item.at("category").get<std::string>();
      r.duration = item.value("duration", 0.0);
      m.records.push_back(std::move(r));
    }
  }
  m.validate();
  return m;
}

void write_manifest_json(const std::string& path, const DatasetManifest& manifest) {
  json arr = json::array();
  for (const auto& r : manifest.records) {
    arr.push_back({{"id", r.id}, {"category", r.category}, {"duration", r.duration}});
  }
  json out = {{"records", arr}, {"category_counts", manifest.category_counts()},
              {"total", manifest.records.size()}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("manifest: cannot write '" + path + "'");
  f << out.dump(2) << '\n';
}

}  // namespace annotool
}  // namespace avfusion
