// Copyright 2026 The sfgda Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "sfgda/adaptation.hpp"
#include "sfgda/errors.hpp"
#include "sfgda/gnn.hpp"
#include "sfgda/graph.hpp"
#include "sfgda/graph_adaptation.hpp"

namespace sfgda::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json default_config() {
  const AdaptConfig a;
  const PretrainOptions p;
  return json{
      {"lambda", a.lambda},
      {"alpha", a.alpha},
      {"beta", a.beta},
      {"tau", a.tau},
      {"omega", a.omega},
      {"k", a.k},
      {"momentum", a.momentum},
      {"budget_fraction", a.budget_fraction},
      {"eta_model", a.eta_model},
      {"eta_delta", a.eta_delta},
      {"t_m", a.t_m},
      {"t_f", a.t_f},
      {"t_s", a.t_s},
      {"epochs", a.epochs},
      {"num_layers", a.num_layers},
      {"hidden_dim", a.hidden_dim},
      {"seed", a.seed},
      {"batch_size", a.batch_size},
      {"include_positive_in_denominator", a.include_positive_in_denominator},
      {"pretrain_epochs", p.epochs},
      {"lr", p.lr},
      {"weight_decay", p.weight_decay},
      {"source", ""},
      {"target", ""},
      {"graph", ""},
      {"mask", ""},
      {"checkpoint", ""},
      {"out", "."},
  };
}

// Defaults, then the config file, then command-line overrides.
json resolve_config(const std::string& config_path, const json& overrides) {
  json cfg = default_config();
  auto merge = [&cfg](const json& layer, const std::string& origin) {
    for (const auto& [key, value] : layer.items()) {
      if (!cfg.contains(key)) throw UsageError("unknown config key '" + key + "' in " + origin);
      const json& def = cfg[key];
      const bool same_kind = (def.is_number() && value.is_number()) ||
                             (def.is_string() && value.is_string()) ||
                             (def.is_boolean() && value.is_boolean());
      if (!same_kind)
        throw UsageError("config key '" + key + "' in " + origin + " must be a " + def.type_name());
      cfg[key] = value;
    }
  };
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot read config " + config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config " + config_path + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw UsageError("config " + config_path + " must be a JSON object");
    merge(file, config_path);
  }
  merge(overrides, "command-line flags");
  return cfg;
}

double real_key(const json& cfg, const char* key) {
  const json& v = cfg.at(key);
  if (!v.is_number()) throw UsageError(std::string("config key '") + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t count_key(const json& cfg, const char* key) {
  const json& v = cfg.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw UsageError(std::string("config key '") + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

bool flag_key(const json& cfg, const char* key) {
  const json& v = cfg.at(key);
  if (!v.is_boolean()) throw UsageError(std::string("config key '") + key + "' must be true or false");
  return v.get<bool>();
}

std::string path_key(const json& cfg, const char* key) {
  const json& v = cfg.at(key);
  if (!v.is_string()) throw UsageError(std::string("config key '") + key + "' must be a string");
  return v.get<std::string>();
}

std::string required_path(const json& cfg, const char* key) {
  std::string p = path_key(cfg, key);
  if (p.empty()) throw UsageError(std::string("missing '") + key + "' (flag --" + key + " or config key)");
  return p;
}

AdaptConfig adapt_config(const json& cfg) {
  AdaptConfig a;
  a.lambda = real_key(cfg, "lambda");
  a.alpha = real_key(cfg, "alpha");
  a.beta = real_key(cfg, "beta");
  a.tau = real_key(cfg, "tau");
  a.omega = real_key(cfg, "omega");
  a.k = count_key(cfg, "k");
  a.momentum = real_key(cfg, "momentum");
  a.budget_fraction = real_key(cfg, "budget_fraction");
  a.eta_model = real_key(cfg, "eta_model");
  a.eta_delta = real_key(cfg, "eta_delta");
  a.t_m = count_key(cfg, "t_m");
  a.t_f = count_key(cfg, "t_f");
  a.t_s = count_key(cfg, "t_s");
  a.epochs = count_key(cfg, "epochs");
  a.num_layers = count_key(cfg, "num_layers");
  a.hidden_dim = count_key(cfg, "hidden_dim");
  a.seed = count_key(cfg, "seed");
  a.batch_size = count_key(cfg, "batch_size");
  a.include_positive_in_denominator = flag_key(cfg, "include_positive_in_denominator");
  try {
    a.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return a;
}

fs::path out_dir(const json& cfg) {
  fs::path out = path_key(cfg, "out");
  if (out.empty()) out = ".";
  fs::create_directories(out);
  return out;
}

fs::path checkpoint_path(const json& cfg) {
  const std::string p = path_key(cfg, "checkpoint");
  return p.empty() ? out_dir(cfg) / "source.ckpt" : fs::path(p);
}

void echo_config(const json& cfg, const std::string& command) {
  const fs::path path = out_dir(cfg) / (command + ".config.json");
  std::ofstream out(path);
  out << cfg.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

void metric(const char* key, double value) { std::printf("%s=%.12g\n", key, value); }
void metric(const char* key, std::size_t value) { std::printf("%s=%zu\n", key, value); }
void metric(const char* key, const std::string& value) {
  std::printf("%s=%s\n", key, value.c_str());
}

TargetGraph load_data(const fs::path& prefix) {
  try {
    return load_graph(prefix);
  } catch (const IoError& e) {
    throw DataError(e.what());
  } catch (const ParseError& e) {
    throw DataError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
}

void require_labels(const TargetGraph& g, const fs::path& prefix) {
  if (!g.has_labels())
    throw DataError("graph " + prefix.string() + " has no labels (" +
                    with_suffix(prefix, ".labels").string() + " missing)");
}

GnnModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw ArtifactError("checkpoint " + path.string() + " does not exist");
  try {
    return load_checkpoint(path);
  } catch (const IoError& e) {
    throw ArtifactError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ArtifactError(e.what());
  }
}

void require_compatible(const GnnModel& m, const TargetGraph& g) {
  if (m.input_dim() != g.feature_dim() || m.num_classes() != g.num_classes)
    throw ArtifactError("checkpoint expects d=" + std::to_string(m.input_dim()) +
                        ", C=" + std::to_string(m.num_classes()) + " but the graph has d=" +
                        std::to_string(g.feature_dim()) + ", C=" + std::to_string(g.num_classes));
}

AdaptationDeltas deltas_from_mask(const json& cfg, const TargetGraph& g) {
  AdaptationDeltas deltas;
  const std::string mask = path_key(cfg, "mask");
  if (mask.empty()) return deltas;
  try {
    deltas.delta_a = load_mask(mask);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  if (deltas.delta_a.size() != g.edges.size())
    throw ArtifactError("mask " + mask + " has " + std::to_string(deltas.delta_a.size()) +
                        " entries for a graph with " + std::to_string(g.edges.size()) + " edges");
  for (double v : deltas.delta_a)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("mask " + mask + " has entries outside [0, 1]");
  return deltas;
}

std::string graph_key(const json& cfg) {
  const std::string g = path_key(cfg, "graph");
  return g.empty() ? required_path(cfg, "target") : g;
}

void cmd_gen_synth(const json& cfg, ShiftSpec spec, const std::string& prefix) {
  spec.seed = count_key(cfg, "seed");
  try {
    spec.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const fs::path out = out_dir(cfg);
  auto [source, target] = make_shift_pair(spec);
  save_graph(source, out / (prefix + "_src"));
  save_graph(target, out / (prefix + "_tgt"));

  json echoed = cfg;
  echoed["generator"] = {{"nodes_per_class", spec.nodes_per_class},
                         {"num_classes", spec.num_classes},
                         {"intra_p", spec.intra_p},
                         {"inter_p", spec.inter_p},
                         {"feature_dim", spec.feature_dim},
                         {"class_mean_separation", spec.class_mean_separation},
                         {"feature_std", spec.feature_std},
                         {"target_mean_shift", spec.target_mean_shift},
                         {"edge_noise", spec.edge_noise},
                         {"prefix", prefix}};
  echo_config(echoed, "gen-synth");
  metric("source", (out / (prefix + "_src")).string());
  metric("target", (out / (prefix + "_tgt")).string());
  metric("source_edges", source.edges.size());
  metric("target_edges", target.edges.size());
}

void cmd_pretrain(const json& cfg) {
  const fs::path prefix = required_path(cfg, "source");
  const AdaptConfig a = adapt_config(cfg);
  PretrainOptions opts;
  opts.epochs = count_key(cfg, "pretrain_epochs");
  opts.lr = real_key(cfg, "lr");
  opts.weight_decay = real_key(cfg, "weight_decay");
  if (opts.lr < 0.0 || opts.weight_decay < 0.0)
    throw UsageError("lr and weight_decay must be >= 0");

  TargetGraph source = load_data(prefix);
  require_labels(source, prefix);
  echo_config(cfg, "pretrain");
  GnnModel model = init_model(source.feature_dim(), a.hidden_dim, source.num_classes,
                              a.num_layers, a.seed);
  PretrainResult r = pretrain_source(std::move(model), source, split_nodes(source, a.seed), opts);
  const fs::path ckpt = checkpoint_path(cfg);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(r.model, ckpt);
  metric("train_acc", r.train_accuracy);
  metric("val_acc", r.val_accuracy);
  metric("test_acc", r.test_accuracy);
  metric("best_epoch", r.best_epoch);
  metric("checkpoint", ckpt.string());
}

void cmd_adapt(const json& cfg) {
  const fs::path prefix = required_path(cfg, "target");
  const AdaptConfig a = adapt_config(cfg);
  GnnModel model = load_model(checkpoint_path(cfg));
  TargetGraph target = load_data(prefix);
  require_compatible(model, target);
  if (a.k >= target.n) throw UsageError("k must be smaller than the number of target nodes");
  echo_config(cfg, "adapt");

  AdaptResult r = adapt(model, target, a);
  const fs::path out = out_dir(cfg);
  save_graph(r.refined, out / "refined");
  save_mask(r.deltas.delta_a, out / "refined.mask");
  save_checkpoint(r.model, out / "adapted.ckpt");
  {
    std::ofstream report(out / "report.json");
    report << report_to_json(r.report) << '\n';
    if (!report) throw IoError("cannot write " + (out / "report.json").string());
  }
  if (r.report.final_acc) metric("final_acc", *r.report.final_acc);
  if (r.report.spm_acc) metric("spm_acc", *r.report.spm_acc);
  metric("edges_deleted", r.report.edges_deleted);
  metric("epochs_run", r.report.epochs_run);
  metric("seconds", r.report.seconds);
}

void cmd_eval(const json& cfg) {
  const fs::path prefix = graph_key(cfg);
  GnnModel model = load_model(checkpoint_path(cfg));
  TargetGraph g = load_data(prefix);
  require_labels(g, prefix);
  require_compatible(model, g);
  const AdaptationDeltas deltas = deltas_from_mask(cfg, g);
  std::optional<std::vector<double>> weights;
  if (!deltas.delta_a.empty()) weights = apply_structure_delta(g, deltas);
  const SparseAdjacency adj =
      weights ? normalize_adjacency(g, std::span<const double>(*weights)) : normalize_adjacency(g);
  const std::vector<std::size_t> pred = predict(model, adj, g.features);
  metric("acc", evaluate_accuracy(pred, *g.labels));
}

void cmd_export(const json& cfg) {
  const fs::path prefix = graph_key(cfg);
  GnnModel model = load_model(checkpoint_path(cfg));
  TargetGraph g = load_data(prefix);
  require_compatible(model, g);
  const AdaptationDeltas deltas = deltas_from_mask(cfg, g);
  const fs::path path = out_dir(cfg) / "embeddings.txt";
  export_embeddings(model, g, deltas, path);
  metric("embeddings", path.string());
  metric("rows", g.n);
  metric("cols", model.hidden_dim());
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Source-free graph domain adaptation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  json overrides = json::object();
  auto real_flag = [&overrides](CLI::App* sub, const std::string& flag, const std::string& key) {
    sub->add_option_function<double>(flag, [&overrides, key](const double& v) { overrides[key] = v; });
  };
  auto count_flag = [&overrides](CLI::App* sub, const std::string& flag, const std::string& key) {
    sub->add_option_function<std::uint64_t>(
        flag, [&overrides, key](const std::uint64_t& v) { overrides[key] = v; });
  };
  auto path_flag = [&overrides](CLI::App* sub, const std::string& flag, const std::string& key) {
    sub->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides[key] = v; });
  };

  app.add_option("--config", config_path, "JSON run configuration (flat keys)");
  count_flag(&app, "--seed", "seed");
  path_flag(&app, "--out", "out");

  CLI::App* gen = app.add_subcommand("gen-synth", "Write a synthetic source/target graph pair");
  ShiftSpec spec;
  std::string prefix = "synth";
  gen->add_option("--prefix", prefix, "File prefix inside the output directory");
  gen->add_option("--nodes-per-class", spec.nodes_per_class)->check(CLI::PositiveNumber);
  gen->add_option("--classes", spec.num_classes)->check(CLI::PositiveNumber);
  gen->add_option("--intra-p", spec.intra_p)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--inter-p", spec.inter_p)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--feature-dim", spec.feature_dim)->check(CLI::PositiveNumber);
  gen->add_option("--separation", spec.class_mean_separation);
  gen->add_option("--feature-std", spec.feature_std)->check(CLI::NonNegativeNumber);
  gen->add_option("--shift", spec.target_mean_shift);
  gen->add_option("--edge-noise", spec.edge_noise)
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            const double v = std::stod(s);
            return v >= 0.0 && v < 1.0 ? "" : "edge noise must lie in [0, 1)";
          },
          "[0,1)"));

  CLI::App* pre = app.add_subcommand("pretrain", "Train the source model on the labelled source graph");
  path_flag(pre, "--source", "source");
  path_flag(pre, "--checkpoint", "checkpoint");
  count_flag(pre, "--epochs", "pretrain_epochs");
  real_flag(pre, "--lr", "lr");
  real_flag(pre, "--weight-decay", "weight_decay");
  count_flag(pre, "--layers", "num_layers");
  count_flag(pre, "--hidden", "hidden_dim");

  CLI::App* ad = app.add_subcommand("adapt", "Adapt a source checkpoint to a target graph");
  path_flag(ad, "--target", "target");
  path_flag(ad, "--checkpoint", "checkpoint");
  real_flag(ad, "--lambda", "lambda");
  real_flag(ad, "--alpha", "alpha");
  real_flag(ad, "--beta", "beta");
  real_flag(ad, "--tau", "tau");
  real_flag(ad, "--omega", "omega");
  count_flag(ad, "--k", "k");
  real_flag(ad, "--momentum", "momentum");
  real_flag(ad, "--budget-fraction", "budget_fraction");
  real_flag(ad, "--eta-model", "eta_model");
  real_flag(ad, "--eta-delta", "eta_delta");
  count_flag(ad, "--tm", "t_m");
  count_flag(ad, "--tf", "t_f");
  count_flag(ad, "--ts", "t_s");
  count_flag(ad, "--epochs", "epochs");
  count_flag(ad, "--batch-size", "batch_size");

  CLI::App* ev = app.add_subcommand("eval", "Accuracy of a checkpoint on a labelled graph");
  CLI::App* ex = app.add_subcommand("export-embeddings", "Write final-layer representations");
  for (CLI::App* sub : {ev, ex}) {
    path_flag(sub, "--checkpoint", "checkpoint");
    path_flag(sub, "--graph", "graph");
    path_flag(sub, "--mask", "mask");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    const json cfg = resolve_config(config_path, overrides);
    if (gen->parsed()) cmd_gen_synth(cfg, spec, prefix);
    if (pre->parsed()) cmd_pretrain(cfg);
    if (ad->parsed()) cmd_adapt(cfg);
    if (ev->parsed()) cmd_eval(cfg);
    if (ex->parsed()) cmd_export(cfg);
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kBadData;
  } catch (const ArtifactError& e) {
    std::cerr << "incompatible artifact: " << e.what() << '\n';
    return kIncompatible;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace sfgda::cli
