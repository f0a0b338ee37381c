#pragma once

// Command-line surface:
//
//   fedforget <subcommand> [--config FILE] [--seed N] [--out DIR]
//             [--data-root DIR] [--set key.path=JSON ...] [subcommand flags]
//
//   train           federated training, writes original.ckpt
//   unlearn         [--checkpoint original.ckpt] unlearning round + recovery
//   retrain         retrain-from-scratch baseline on the remaining data
//   eval            --checkpoint FILE [--retrain FILE]; prints one metrics record
//   skyeye-train    [--checkpoint unlearned.ckpt] trains the Skyeye GAN
//   skyeye-report   [--generator FILE] [--reference FILE] [--classes 0-9] [--grid FILE]
//   run-all         the whole pipeline
//
// --seed N replaces every seed in the config with derive_seed(N, {k}).
// Relative artifact paths resolve against the run directory <out>/<hash>/.
// Exit codes: 0 success, 1 runtime failure (one-line diagnostic on stderr),
// 2 usage error.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedforget/harness/experiment.hpp"

namespace ff {

// "0-9", "3", "1,4,7" or mixes like "0-2,5".
inline std::vector<int> parse_class_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  auto to_int = [&](const std::string& t) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    FF_EXPECT(used == t.size() && v >= 0, ConfigError, "bad class list '" + s + "'");
    return v;
  };
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(to_int(part));
    } else {
      const int a = to_int(part.substr(0, dash)), b = to_int(part.substr(dash + 1));
      FF_EXPECT(a <= b, ConfigError, "bad class range '" + part + "'");
      for (int c = a; c <= b; ++c) out.push_back(c);
    }
  }
  FF_EXPECT(!out.empty(), ConfigError, "empty class list");
  return out;
}

// Applies "a.b.c=<json>" to a config object; non-JSON values are taken as
// strings.
inline void apply_override(json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  FF_EXPECT(eq != std::string::npos && eq > 0, ConfigError, "--set expects key.path=value, got '" + kv + "'");
  json value;
  try {
    value = json::parse(kv.substr(eq + 1));
  } catch (const json::parse_error&) {
    value = kv.substr(eq + 1);
  }
  json* node = &j;
  std::stringstream ss(kv.substr(0, eq));
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    json& next = (*node)[keys[i]];
    if (next.is_null()) next = json::object();
    node = &next;
  }
  (*node)[keys.back()] = value;
}

inline int cli(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Federated unlearning simulator with Skyeye GAN evaluation", "fedforget"};
  app.require_subcommand(1);
  std::string config_path, out_dir, data_root;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides every config seed)");
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--data-root", data_root, "dataset root (default: $FEDFORGET_DATA_ROOT)");
  app.add_option("--set", sets, "config override key.path=value")->take_all();
  app.fallthrough();

  auto* train = app.add_subcommand("train", "federated training");
  auto* unlearn = app.add_subcommand("unlearn", "unlearning round and performance recovery");
  auto* retrain = app.add_subcommand("retrain", "retrain-from-scratch baseline");
  auto* eval = app.add_subcommand("eval", "metrics for one checkpoint");
  auto* sk_train = app.add_subcommand("skyeye-train", "train the Skyeye GAN");
  auto* sk_report = app.add_subcommand("skyeye-report", "class fidelity, decision and grid");
  auto* run_all = app.add_subcommand("run-all", "the whole pipeline");
  (void)train;
  (void)retrain;
  (void)run_all;

  std::string checkpoint, retrain_ckpt, generator, reference, classes = "", grid = "grid.png";
  unlearn->add_option("--checkpoint", checkpoint, "trained global model");
  eval->add_option("--checkpoint", checkpoint, "model to evaluate");
  eval->add_option("--retrain", retrain_ckpt, "retrain baseline for JSD/L2");
  sk_train->add_option("--checkpoint", checkpoint, "classifier to visualize");
  sk_report->add_option("--generator", generator, "generator checkpoint");
  sk_report->add_option("--reference", reference, "reference classifier for fidelity scores");
  sk_report->add_option("--classes", classes, "class rows, e.g. 0-9");
  sk_report->add_option("--grid", grid, "grid PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return 2;
  }

  try {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        j = json::parse(in, nullptr, true, true);
      } catch (const json::parse_error& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
    }
    for (const auto& s : sets) apply_override(j, s);
    auto cfg = config_from_json(j);
    if (!out_dir.empty()) cfg.out = out_dir;
    if (!data_root.empty()) cfg.data_root = data_root;
    if (*seed_opt) {
      std::uint64_t k = 0;
      for (auto* s : {&cfg.seeds.data, &cfg.seeds.model, &cfg.seeds.poison, &cfg.seeds.train,
                      &cfg.seeds.retrain, &cfg.seeds.gan, &cfg.seeds.reference, &cfg.seeds.eval})
        *s = derive_seed(seed, {++k});
    }

    const bool fresh = app.got_subcommand(run_all);
    Experiment ex(cfg, fresh);
    auto resolve = [&](const std::string& p, const std::string& fallback) {
      std::filesystem::path path = p.empty() ? fallback : p;
      if (path.is_relative() && (!std::filesystem::exists(path) || p.empty()))
        path = ex.run().dir() / path;
      return path;
    };
    auto need = [&](const std::filesystem::path& p, const std::string& what) {
      FF_EXPECT(std::filesystem::exists(p), ConfigError, what + " not found: " + p.string());
      return p;
    };

    if (app.got_subcommand(train)) {
      ex.train();
      out << ex.run().path("original.ckpt").string() << '\n';
    } else if (app.got_subcommand(unlearn)) {
      auto st = ex.trained_from(need(resolve(checkpoint, "original.ckpt"), "trained checkpoint"));
      ex.unlearn(std::move(st));
      out << ex.run().path("unlearned.ckpt").string() << '\n';
    } else if (app.got_subcommand(retrain)) {
      ex.retrain(ex.remaining_shards());
      out << ex.run().path("retrain.ckpt").string() << '\n';
    } else if (app.got_subcommand(eval)) {
      FF_EXPECT(!checkpoint.empty(), ConfigError, "eval: checkpoint required (--checkpoint FILE)");
      auto params = load_checkpoint(need(resolve(checkpoint, ""), "checkpoint")).params;
      std::optional<ParamVector<float>> re;
      auto rp = resolve(retrain_ckpt, "retrain.ckpt");
      if (!retrain_ckpt.empty()) need(rp, "retrain checkpoint");
      if (std::filesystem::exists(rp)) re = load_checkpoint(rp).params;
      auto m = ex.evaluate(params, checkpoint, ex.forget_set(ex.shards()), re ? &*re : nullptr);
      ex.report_metrics(m);
      out << to_json(m).dump() << '\n';
    } else if (app.got_subcommand(sk_train)) {
      auto c = load_checkpoint(need(resolve(checkpoint, "unlearned.ckpt"), "classifier checkpoint"));
      ex.skyeye_train(c.params);
      out << ex.run().path("generator.ckpt").string() << '\n';
    } else if (app.got_subcommand(sk_report)) {
      auto g = load_checkpoint(need(resolve(generator, "generator.ckpt"), "generator checkpoint")).params;
      std::vector<int> rows;
      if (classes.empty()) {
        rows.resize(network_for<float>(g.arch_id()).arch().class_count);
        std::iota(rows.begin(), rows.end(), 0);
      } else {
        rows = parse_class_list(classes);
      }
      std::optional<ParamVector<float>> ref;
      if (!reference.empty()) ref = load_checkpoint(need(resolve(reference, ""), "reference checkpoint")).params;
      auto o = ex.skyeye_report(g, ref ? &*ref : nullptr, rows, resolve(grid, "grid.png"));
      json j{{"grid", o.grid}};
      for (const auto& [c, f] : o.fidelity) j["fidelity_" + std::to_string(c)] = f;
      if (o.decision) j["decision"] = o.decision->verdict;
      out << j.dump() << '\n';
    } else if (app.got_subcommand(run_all)) {
      auto res = ex.run_all();
      if (res.failure) {
        err << "error: " << *res.failure << '\n';
        return 1;
      }
      out << (res.dir / "report.ndjson").string() << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ff
