// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface. Every subcommand reads a JSON config file; --seed and
// --out override the config's seed/output directory. Reports go to stdout as
// JSON. Exit codes: 0 success, 2 config/input error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "avfusion/annotool.hpp"
#include "avfusion/blob.hpp"
#include "avfusion/grad_check.hpp"
#include "avfusion/records.hpp"
#include "avfusion/train.hpp"

namespace {

using avfusion::ConfigError;
using avfusion::NumericError;
using nlohmann::json;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

std::string out_dir(const CommonArgs& args, const json& cfg) {
  std::string dir = cfg.value("out", std::string("."));
  if (args.out) dir = *args.out;
  std::filesystem::create_directories(dir);
  return dir;
}

avfusion::SyntheticConfig synthetic_from_json(const json& j) {
  avfusion::SyntheticConfig c;
  c.snippets = j.value("snippets", c.snippets);
  c.channels = j.value("channels", c.channels);
  c.classes = j.value("classes", c.classes);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.prototype_scale = j.value("prototype_scale", c.prototype_scale);
  c.train_samples = j.value("train_samples", c.train_samples);
  c.test_samples = j.value("test_samples", c.test_samples);
  c.seed = j.value("seed", c.seed);
  c.balanced_labels = j.value("balanced_labels", c.balanced_labels);
  c.validate();
  return c;
}

json synthetic_to_json(const avfusion::SyntheticConfig& c) {
  return {{"snippets", c.snippets},       {"channels", c.channels},
          {"classes", c.classes},         {"noise_sigma", c.noise_sigma},
          {"prototype_scale", c.prototype_scale}, {"train_samples", c.train_samples},
          {"test_samples", c.test_samples}, {"seed", c.seed},
          {"balanced_labels", c.balanced_labels}};
}

template <typename S>
avfusion::Tensor<S> split_tensor(const std::vector<avfusion::SyntheticSample>& samples,
                                 bool audio) {
  using avfusion::Index;
  if (samples.empty()) throw ConfigError("dataset: empty split");
  const Index n = static_cast<Index>(samples.size());
  const Index s = samples[0].audio.rows(), c = samples[0].audio.cols();
  std::vector<S> data;
  data.reserve(static_cast<std::size_t>(n * s * c));
  for (const auto& sample : samples) {
    const auto& m = audio ? sample.audio : sample.visual;
    for (Index i = 0; i < s; ++i) {
      for (Index j = 0; j < c; ++j) data.push_back(static_cast<S>(m(i, j)));
    }
  }
  return avfusion::Tensor<S>::from({n, s, c}, std::move(data));
}

void write_dataset(const std::string& path, const avfusion::SyntheticDataset& data) {
  avfusion::Blob blob;
  blob.add("train_audio", split_tensor<double>(data.train, true));
  blob.add("train_visual", split_tensor<double>(data.train, false));
  blob.add("test_audio", split_tensor<double>(data.test, true));
  blob.add("test_visual", split_tensor<double>(data.test, false));
  json train_labels = json::array(), test_labels = json::array();
  for (const auto& s : data.train) train_labels.push_back(s.label);
  for (const auto& s : data.test) test_labels.push_back(s.label);
  blob.meta["format"] = "dataset";
  blob.meta["train_labels"] = train_labels;
  blob.meta["test_labels"] = test_labels;
  blob.meta["synthetic"] = synthetic_to_json(data.cfg);
  blob.save(path);
}

std::vector<avfusion::SyntheticSample> split_from_blob(const avfusion::Blob& blob,
                                                       const std::string& prefix,
                                                       const json& labels) {
  using avfusion::Index;
  avfusion::Tensor<double> audio = blob.tensor<double>(prefix + "_audio");
  avfusion::Tensor<double> visual = blob.tensor<double>(prefix + "_visual");
  if (audio.rank() != 3 || visual.shape() != audio.shape()) {
    throw ConfigError("dataset: malformed " + prefix + " tensors");
  }
  const Index n = audio.dim(0), s = audio.dim(1), c = audio.dim(2);
  if (static_cast<Index>(labels.size()) != n) {
    throw ConfigError("dataset: " + prefix + " has " + std::to_string(n) + " samples but " +
                      std::to_string(labels.size()) + " labels");
  }
  std::vector<avfusion::SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n));
  auto av = audio.values();
  auto vv = visual.values();
  for (Index i = 0; i < n; ++i) {
    avfusion::SyntheticSample sample;
    sample.label = labels[static_cast<std::size_t>(i)].get<int>();
    sample.audio.resize(s, c);
    sample.visual.resize(s, c);
    for (Index r = 0; r < s; ++r) {
      for (Index col = 0; col < c; ++col) {
        sample.audio(r, col) = av[static_cast<std::size_t>((i * s + r) * c + col)];
        sample.visual(r, col) = vv[static_cast<std::size_t>((i * s + r) * c + col)];
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

avfusion::SyntheticDataset load_dataset(const json& data_cfg,
                                        std::optional<std::uint64_t> seed_override) {
  if (data_cfg.contains("synthetic")) {
    avfusion::SyntheticConfig c = synthetic_from_json(data_cfg.at("synthetic"));
    if (seed_override) c.seed = *seed_override;
    return avfusion::gen_synthetic(c);
  }
  if (data_cfg.contains("path")) {
    const avfusion::Blob blob = avfusion::Blob::load(data_cfg.at("path").get<std::string>());
    if (blob.meta.value("format", "") != "dataset") {
      throw ConfigError("dataset: '" + data_cfg.at("path").get<std::string>() +
                        "' is not a dataset blob");
    }
    avfusion::SyntheticDataset data;
    data.cfg = synthetic_from_json(blob.meta.value("synthetic", json::object()));
    data.train = split_from_blob(blob, "train", blob.meta.at("train_labels"));
    data.test = split_from_blob(blob, "test", blob.meta.at("test_labels"));
    return data;
  }
  throw ConfigError("config: 'data' needs either a 'synthetic' block or a 'path'");
}

avfusion::PolarityMap polarity_for(const avfusion::LgfConfig& cfg) {
  if (cfg.classes == 6) return avfusion::PolarityMap::six_emotions();
  throw ConfigError("no default polarity map for " + std::to_string(cfg.classes) +
                    " classes; use 6 or extend the config");
}

template <typename S>
int run_train(const json& cfg, const CommonArgs& args) {
  avfusion::LgfConfig model_cfg = avfusion::lgf_config_from_json(cfg.value("model", json::object()));
  avfusion::TrainConfig train_cfg = avfusion::train_config_from_json(cfg.value("train", json::object()));
  if (args.seed) train_cfg.seed = *args.seed;

  avfusion::SyntheticDataset data = load_dataset(cfg.value("data", json::object()), args.seed);
  const avfusion::PolarityMap pmap = polarity_for(model_cfg);

  avfusion::TrainedModel<S> model =
      avfusion::train<S>(model_cfg, train_cfg, data.train, pmap);

  const std::string dir = out_dir(args, cfg);
  avfusion::save_checkpoint(dir + "/checkpoint.bin", model);
  json history = json::array();
  for (const auto& e : model.history) {
    history.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"train_acc", e.train_acc}});
  }
  {
    std::ofstream h(dir + "/history.json", std::ios::trunc);
    h << history.dump(2) << '\n';
  }

  json report;
  report["checkpoint"] = dir + "/checkpoint.bin";
  report["train_metrics"] = avfusion::evaluate(model_cfg, model.params, data.train).to_json();
  if (!data.test.empty()) {
    report["test_metrics"] = avfusion::evaluate(model_cfg, model.params, data.test).to_json();
  }
  std::cout << report.dump(2) << std::endl;
  return 0;
}

template <typename S>
int run_eval(const json& cfg, const CommonArgs& args) {
  const avfusion::Blob blob = avfusion::Blob::load(cfg.at("checkpoint").get<std::string>());
  avfusion::TrainedModel<S> model = avfusion::load_checkpoint_as<S>(blob);
  avfusion::SyntheticDataset data = load_dataset(cfg.value("data", json::object()), args.seed);
  const std::string split = cfg.value("split", std::string("test"));
  const auto& samples = split == "train" ? data.train : data.test;
  std::cout << avfusion::evaluate(model.model_cfg, model.params, samples).to_json().dump(2)
            << std::endl;
  return 0;
}

int run_gradcheck(const json& cfg, const CommonArgs& args) {
  avfusion::LgfConfig model_cfg = avfusion::lgf_config_from_json(cfg.value("model", json::object()));
  const int batch = cfg.value("batch", 2);
  const double step = cfg.value("step", 1e-5);
  const double tolerance = cfg.value("tolerance", 1e-4);
  std::uint64_t seed = cfg.value("seed", 0);
  if (args.seed) seed = *args.seed;

  avfusion::SyntheticConfig data_cfg;
  data_cfg.snippets = model_cfg.snippets;
  data_cfg.channels = model_cfg.channels;
  data_cfg.train_samples = batch;
  data_cfg.test_samples = 1;
  data_cfg.seed = seed;
  const avfusion::SyntheticDataset data = avfusion::gen_synthetic(data_cfg);

  avfusion::Rng rng(seed);
  avfusion::LgfParams<double> params = avfusion::LgfParams<double>::init(model_cfg, rng);
  const avfusion::PolarityMap pmap = polarity_for(model_cfg);
  avfusion::LossConfig loss_cfg;

  std::vector<const avfusion::SyntheticSample*> batch_ptrs;
  for (const auto& s : data.train) batch_ptrs.push_back(&s);
  auto objective = [&]() {
    return avfusion::batch_loss(model_cfg, params, batch_ptrs, loss_cfg, pmap);
  };
  const avfusion::GradCheckReport report =
      avfusion::grad_check(objective, params.named(), step, tolerance);

  json out;
  out["pass"] = report.pass;
  out["max_rel_err"] = report.max_rel_err;
  out["tolerance"] = report.tolerance;
  out["step"] = report.step;
  json worst = json::array();
  for (const auto& e : report.params) {
    worst.push_back({{"name", e.name},
                     {"max_rel_err", e.max_rel_err},
                     {"max_abs_err", e.max_abs_err},
                     {"entries", e.count}});
  }
  out["params"] = worst;
  std::cout << out.dump(2) << std::endl;
  if (!report.pass) {
    throw NumericError("gradient check failed: max relative error " +
                       std::to_string(report.max_rel_err));
  }
  return 0;
}

int run_gen_data(const json& cfg, const CommonArgs& args) {
  avfusion::SyntheticConfig c = synthetic_from_json(cfg.value("synthetic", json::object()));
  if (args.seed) c.seed = *args.seed;
  const avfusion::SyntheticDataset data = avfusion::gen_synthetic(c);
  const std::string dir = out_dir(args, cfg);
  const std::string path = dir + "/dataset.blob";
  write_dataset(path, data);
  json report = {{"path", path},
                 {"train_samples", data.train.size()},
                 {"test_samples", data.test.size()},
                 {"synthetic", synthetic_to_json(c)}};
  std::cout << report.dump(2) << std::endl;
  return 0;
}

int run_consistency(const json& cfg, const CommonArgs&) {
  using namespace avfusion::annotool;
  const auto records = read_records(cfg.at("input").get<std::string>());
  auto sets = group_into_sets(records);
  if (!cfg.value("stage", std::string()).empty()) {
    const std::string stage = cfg["stage"];
    std::vector<CrossCheckSet> filtered;
    for (auto& s : sets) {
      if (s.stage == stage) filtered.push_back(std::move(s));
    }
    sets = std::move(filtered);
  }
  const std::string mode = cfg.value("mode", std::string("both"));
  json out;
  out["sets"] = sets.size();
  if (mode == "intra" || mode == "both") out["s_a"] = intra_consistency(sets);
  if (mode == "inter" || mode == "both") {
    out["s_r"] = inter_consistency(sets, cfg.value("categories", 6));
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int run_resolve(const json& cfg, const CommonArgs& args) {
  using namespace avfusion::annotool;
  const auto records = read_records(cfg.at("input").get<std::string>());
  json results = json::array();
  json stage_counts = json::object();
  double conf_sum = 0.0;
  long conf_n = 0;
  for (const auto& r : records) {
    const Resolution res = resolve_label(r.vote);
    const std::string key = "stage" + std::to_string(res.stage);
    stage_counts[key] = stage_counts.value(key, 0) + 1;
    for (double c : r.vote.confidences) {
      conf_sum += c;
      ++conf_n;
    }
    results.push_back({{"sample_id", r.sample_id}, {"label", res.label}, {"stage", res.stage}});
  }
  json out;
  out["resolutions"] = results;
  out["stage_counts"] = stage_counts;
  out["mean_confidence"] = conf_n > 0 ? conf_sum / conf_n : 0.0;
  if (args.out) {
    std::ofstream f(*args.out + "/resolutions.json", std::ios::trunc);
    f << out.dump(2) << '\n';
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int run_kappa(const json& cfg, const CommonArgs&) {
  std::vector<std::vector<int>> table;
  if (cfg.contains("table")) {
    table = cfg.at("table").get<std::vector<std::vector<int>>>();
  } else if (cfg.contains("input")) {
    const json j = load_config(cfg.at("input").get<std::string>());
    table = (j.is_array() ? j : j.at("table")).get<std::vector<std::vector<int>>>();
  } else {
    throw ConfigError("kappa: config needs 'table' or 'input'");
  }
  const int raters = cfg.at("raters").get<int>();
  json out = {{"kappa", avfusion::annotool::fleiss_kappa(table, raters)},
              {"items", table.size()},
              {"raters", raters}};
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int run_mos(const json& cfg, const CommonArgs&) {
  json ratings;
  if (cfg.contains("ratings")) {
    ratings = cfg.at("ratings");
  } else if (cfg.contains("input")) {
    ratings = load_config(cfg.at("input").get<std::string>());
  } else {
    throw ConfigError("mos: config needs 'ratings' or 'input'");
  }
  json out;
  for (const auto& [name, values] : ratings.items()) {
    out[name] = avfusion::annotool::mos_aggregate(values.get<std::vector<int>>());
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int run_sample(const json& cfg, const CommonArgs& args) {
  using namespace avfusion::annotool;
  const DatasetManifest manifest = read_manifest(cfg.at("manifest").get<std::string>());
  SamplingRules rules;
  if (cfg.contains("balanced_takes")) {
    rules.balanced_takes = cfg.at("balanced_takes").get<std::map<std::string, std::int64_t>>();
  }
  rules.test_total = cfg.value("test_total", rules.test_total);
  std::uint64_t seed = cfg.value("seed", 0);
  if (args.seed) seed = *args.seed;

  const VariantManifests variants = sample_variants(manifest, rules, seed);
  const std::string dir = out_dir(args, cfg);
  write_manifest_json(dir + "/balanced_manifest.json", variants.balanced);
  write_manifest_json(dir + "/test_manifest.json", variants.test);

  json out = {{"balanced_total", variants.balanced.records.size()},
              {"balanced_counts", variants.balanced.category_counts()},
              {"test_total", variants.test.records.size()},
              {"test_counts", variants.test.category_counts()},
              {"seed", seed},
              {"out", dir}};
  std::cout << out.dump(2) << std::endl;
  return 0;
}

int dispatch(const std::string& name, const CommonArgs& args) {
  const json cfg = load_config(args.config_path);
  const std::string precision =
      cfg.contains("train") ? cfg.at("train").value("precision", "f32") : "f32";
  if (name == "train") {
    return precision == "f64" ? run_train<double>(cfg, args) : run_train<float>(cfg, args);
  }
  if (name == "eval") {
    const avfusion::Blob blob = avfusion::Blob::load(cfg.at("checkpoint").get<std::string>());
    const std::string p = blob.meta.value("precision", "f32");
    return p == "f64" ? run_eval<double>(cfg, args) : run_eval<float>(cfg, args);
  }
  if (name == "gradcheck") return run_gradcheck(cfg, args);
  if (name == "gen-data") return run_gen_data(cfg, args);
  if (name == "consistency") return run_consistency(cfg, args);
  if (name == "resolve") return run_resolve(cfg, args);
  if (name == "kappa") return run_kappa(cfg, args);
  if (name == "mos") return run_mos(cfg, args);
  if (name == "sample") return run_sample(cfg, args);
  throw ConfigError("unknown subcommand '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-visual fusion workbench"};
  app.require_subcommand(1);

  const std::vector<std::string> names = {"train",  "eval", "gradcheck", "gen-data",
                                          "consistency", "resolve", "kappa", "mos", "sample"};
  const std::vector<std::string> descriptions = {
      "train a fusion model on synthetic or stored data",
      "evaluate a checkpoint and print metrics JSON",
      "check model gradients against central finite differences",
      "generate and store a synthetic cross-modal dataset",
      "intra/inter-group consistency scores from annotation records",
      "resolve final labels through the multi-stage voting scheme",
      "Fleiss' kappa over an items x categories count table",
      "mean opinion scores per dataset",
      "draw the balanced and test-oriented variant manifests"};

  CommonArgs args;
  std::string chosen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    sub->add_option("--config", args.config_path, "JSON config file")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed", [&args](const std::uint64_t& v) { args.seed = v; }, "seed override");
    sub->add_option_function<std::string>(
        "--out", [&args](const std::string& v) { args.out = v; }, "output directory override");
    sub->callback([&chosen, name = names[i]] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return dispatch(chosen, args);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << std::endl;
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const avfusion::ContractError& e) {
    std::cerr << "input error: " << e.what() << std::endl;
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
