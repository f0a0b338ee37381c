#pragma once

// Experiment configuration. The file format is JSON; every key is optional
// and falls back to the default listed below. Unknown keys are rejected.
//
// {
//   "dataset":  {"name": "mnist", "root": ""},          // root "" = env/compiled default
//   "n_users":  10,
//   "seeds":    {"data": 1, "model": 7, "poison": 11, "train": 0, "retrain": 8,
//                "gan": 3, "reference": 9, "eval": 0},
//   "train":    {"arch": "lenet5_mnist", "rounds": 10, "local_epochs": 2,
//                "rule": "sgd", "learning_rate": 0.01, "momentum": 0.9,
//                "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "batch_size": 100},
//   "unlearn":  {"mu_D": 0.33, "mu_AMA": 0.33, "mu_H": 0.33, "temp": 2.0, "q": 2.0,
//                "bnd": 15.0, "lambda_reg": 0.4, "lr_unlearn": 0.005, "epochs": 5,
//                "batch_size": 100, "tap_layers": [], "lr_decay": false,
//                "lr_decay_factor": 0.9, "legacy_unbounded_hard": false,
//                "reduction": "mean"},
//   "forget":   {"mode": "sample", "rate": 0.08, "classes": [], "users": [],
//                "trigger_size": 3, "trigger_target": 0},   // users [] = every user
//   "recovery": {"enabled": true, "min_acc_factor": 0.9, "max_iters": 10},
//   "retrain":  {"enabled": true, "rounds": 0},              // 0 = train.rounds
//   "skyeye":   {"enabled": false, "generator_arch": "mnist_generator",
//                "discriminator_arch": "mnist_discriminator", "mu_d": 0.5, "mu_c": 0.5,
//                "mu_f": 0.5, "mu_r": 0.5, "lr_G": 3e-4, "lr_D": 1e-5, "beta1": 0.5,
//                "beta2": 0.999, "noise_dim": 100, "j_steps": 1, "epochs": 1,
//                "batch_size": 100, "max_steps": 0, "init_output_bias": true,
//                "fidelity_samples": 200,
//                "tau_low": 0.3, "tau_high": 0.7, "grid_per_class": 8,
//                "reference_rounds": 0},                    // 0 = train.rounds
//   "out": "out"
// }
//
// The config hash is FNV-1a 64 over the canonical dump (sorted keys, no
// whitespace) with "out" and "dataset.root" removed, so artifact
// directories do not depend on where the data or outputs live.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedforget/core/error.hpp"
#include "fedforget/core/hash.hpp"
#include "fedforget/data/partition.hpp"
#include "fedforget/nn/ops.hpp"
#include "fedforget/skyeye/skyeye.hpp"
#include "fedforget/unlearn/losses.hpp"

#ifndef FEDFORGET_DEFAULT_DATA_ROOT
#define FEDFORGET_DEFAULT_DATA_ROOT "data"
#endif

namespace ff {

using json = nlohmann::json;

struct Seeds {
  std::uint64_t data = 1, model = 7, poison = 11, train = 0, retrain = 8, gan = 3, reference = 9,
                eval = 0;
};

struct TrainConfig {
  std::string arch = "lenet5_mnist";
  int rounds = 10;
  int local_epochs = 2;
  OptConfig opt = [] {
    OptConfig o;
    o.momentum = 0.9;
    return o;
  }();
};

struct ForgetSpec {
  ForgetMode mode = ForgetMode::sample;
  double rate = 0.08;
  std::vector<int> classes;
  std::vector<int> users;  // empty: every user
  std::size_t trigger_size = 3;
  int trigger_target = 0;
};

struct RecoveryConfig {
  bool enabled = true;
  double min_acc_factor = 0.9;
  int max_iters = 10;
};

struct RetrainConfig {
  bool enabled = true;
  int rounds = 0;
};

struct SkyeyeConfig {
  bool enabled = false;
  GanConfig gan;
  std::size_t fidelity_samples = 200;
  double tau_low = 0.3, tau_high = 0.7;
  std::size_t grid_per_class = 8;
  int reference_rounds = 0;
};

struct ExperimentConfig {
  std::string dataset = "mnist";
  std::string data_root;
  int n_users = 10;
  Seeds seeds;
  TrainConfig train;
  UnlearnConfig unlearn;
  ForgetSpec forget;
  RecoveryConfig recovery;
  RetrainConfig retrain;
  SkyeyeConfig skyeye;
  std::string out = "out";

  void validate() const;
  std::filesystem::path resolved_data_root() const {
    if (!data_root.empty()) return data_root;
    if (const char* env = std::getenv("FEDFORGET_DATA_ROOT"); env && *env) return env;
    return FEDFORGET_DEFAULT_DATA_ROOT;
  }
  int retrain_rounds() const { return retrain.rounds > 0 ? retrain.rounds : train.rounds; }
  int reference_rounds() const {
    return skyeye.reference_rounds > 0 ? skyeye.reference_rounds : train.rounds;
  }
};

namespace detail {

inline const char* mode_name(ForgetMode m) { return m == ForgetMode::sample ? "sample" : "category"; }

// Reads known keys from one JSON object and rejects the rest.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    FF_EXPECT(j.is_object(), ConfigError, where_ + ": expected an object");
  }
  ~StrictObject() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where_ + k + "'");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + where_ + key + "': " + e.what());
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  const auto& o = c.train.opt;
  const auto& u = c.unlearn;
  const auto& g = c.skyeye.gan;
  return json{
      {"dataset", {{"name", c.dataset}, {"root", c.data_root}}},
      {"n_users", c.n_users},
      {"seeds",
       {{"data", c.seeds.data}, {"model", c.seeds.model}, {"poison", c.seeds.poison},
        {"train", c.seeds.train}, {"retrain", c.seeds.retrain},
        {"gan", c.seeds.gan}, {"reference", c.seeds.reference}, {"eval", c.seeds.eval}}},
      {"train",
       {{"arch", c.train.arch}, {"rounds", c.train.rounds}, {"local_epochs", c.train.local_epochs},
        {"rule", o.rule == OptRule::sgd ? "sgd" : "adam"}, {"learning_rate", o.learning_rate},
        {"momentum", o.momentum}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps},
        {"batch_size", o.batch_size}}},
      {"unlearn",
       {{"mu_D", u.mu_D}, {"mu_AMA", u.mu_AMA}, {"mu_H", u.mu_H}, {"temp", u.temp}, {"q", u.q},
        {"bnd", u.bnd}, {"lambda_reg", u.lambda_reg}, {"lr_unlearn", u.lr_unlearn},
        {"epochs", u.epochs}, {"batch_size", u.batch_size}, {"tap_layers", u.tap_layers},
        {"lr_decay", u.lr_decay}, {"lr_decay_factor", u.lr_decay_factor},
        {"legacy_unbounded_hard", u.legacy_unbounded_hard},
        {"reduction", u.reduction == UnlearnConfig::Reduction::mean ? "mean" : "sum"}}},
      {"forget",
       {{"mode", detail::mode_name(c.forget.mode)}, {"rate", c.forget.rate},
        {"classes", c.forget.classes}, {"users", c.forget.users},
        {"trigger_size", c.forget.trigger_size}, {"trigger_target", c.forget.trigger_target}}},
      {"recovery",
       {{"enabled", c.recovery.enabled}, {"min_acc_factor", c.recovery.min_acc_factor},
        {"max_iters", c.recovery.max_iters}}},
      {"retrain", {{"enabled", c.retrain.enabled}, {"rounds", c.retrain.rounds}}},
      {"skyeye",
       {{"enabled", c.skyeye.enabled}, {"generator_arch", g.generator_arch},
        {"discriminator_arch", g.discriminator_arch}, {"mu_d", g.mu_d}, {"mu_c", g.mu_c},
        {"mu_f", g.mu_f}, {"mu_r", g.mu_r}, {"lr_G", g.lr_G}, {"lr_D", g.lr_D},
        {"beta1", g.beta1}, {"beta2", g.beta2}, {"noise_dim", g.noise_dim},
        {"j_steps", g.j_steps}, {"epochs", g.epochs}, {"batch_size", g.batch_size},
        {"max_steps", g.max_steps}, {"init_output_bias", g.init_output_bias},
        {"fidelity_samples", c.skyeye.fidelity_samples},
        {"tau_low", c.skyeye.tau_low}, {"tau_high", c.skyeye.tau_high},
        {"grid_per_class", c.skyeye.grid_per_class},
        {"reference_rounds", c.skyeye.reference_rounds}}},
      {"out", c.out}};
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::StrictObject top(j, "");
  if (auto s = top.sub("dataset")) {
    detail::StrictObject o(*s, "dataset.");
    o.get("name", c.dataset);
    o.get("root", c.data_root);
  }
  top.get("n_users", c.n_users);
  if (auto s = top.sub("seeds")) {
    detail::StrictObject o(*s, "seeds.");
    o.get("data", c.seeds.data);
    o.get("model", c.seeds.model);
    o.get("poison", c.seeds.poison);
    o.get("train", c.seeds.train);
    o.get("retrain", c.seeds.retrain);
    o.get("gan", c.seeds.gan);
    o.get("reference", c.seeds.reference);
    o.get("eval", c.seeds.eval);
  }
  if (auto s = top.sub("train")) {
    detail::StrictObject o(*s, "train.");
    auto& opt = c.train.opt;
    std::string rule = opt.rule == OptRule::sgd ? "sgd" : "adam";
    o.get("arch", c.train.arch);
    o.get("rounds", c.train.rounds);
    o.get("local_epochs", c.train.local_epochs);
    o.get("rule", rule);
    o.get("learning_rate", opt.learning_rate);
    o.get("momentum", opt.momentum);
    o.get("beta1", opt.beta1);
    o.get("beta2", opt.beta2);
    o.get("eps", opt.eps);
    o.get("batch_size", opt.batch_size);
    FF_EXPECT(rule == "sgd" || rule == "adam", ConfigError, "train.rule must be sgd or adam");
    opt.rule = rule == "sgd" ? OptRule::sgd : OptRule::adam;
  }
  if (auto s = top.sub("unlearn")) {
    detail::StrictObject o(*s, "unlearn.");
    auto& u = c.unlearn;
    std::string red = "mean";
    o.get("mu_D", u.mu_D);
    o.get("mu_AMA", u.mu_AMA);
    o.get("mu_H", u.mu_H);
    o.get("temp", u.temp);
    o.get("q", u.q);
    o.get("bnd", u.bnd);
    o.get("lambda_reg", u.lambda_reg);
    o.get("lr_unlearn", u.lr_unlearn);
    o.get("epochs", u.epochs);
    o.get("batch_size", u.batch_size);
    o.get("tap_layers", u.tap_layers);
    o.get("lr_decay", u.lr_decay);
    o.get("lr_decay_factor", u.lr_decay_factor);
    o.get("legacy_unbounded_hard", u.legacy_unbounded_hard);
    o.get("reduction", red);
    FF_EXPECT(red == "mean" || red == "sum", ConfigError, "unlearn.reduction must be mean or sum");
    u.reduction = red == "mean" ? UnlearnConfig::Reduction::mean : UnlearnConfig::Reduction::sum;
  }
  if (auto s = top.sub("forget")) {
    detail::StrictObject o(*s, "forget.");
    std::string mode = detail::mode_name(c.forget.mode);
    o.get("mode", mode);
    o.get("rate", c.forget.rate);
    o.get("classes", c.forget.classes);
    o.get("users", c.forget.users);
    o.get("trigger_size", c.forget.trigger_size);
    o.get("trigger_target", c.forget.trigger_target);
    FF_EXPECT(mode == "sample" || mode == "category", ConfigError,
              "forget.mode must be sample or category");
    c.forget.mode = mode == "sample" ? ForgetMode::sample : ForgetMode::category;
  }
  if (auto s = top.sub("recovery")) {
    detail::StrictObject o(*s, "recovery.");
    o.get("enabled", c.recovery.enabled);
    o.get("min_acc_factor", c.recovery.min_acc_factor);
    o.get("max_iters", c.recovery.max_iters);
  }
  if (auto s = top.sub("retrain")) {
    detail::StrictObject o(*s, "retrain.");
    o.get("enabled", c.retrain.enabled);
    o.get("rounds", c.retrain.rounds);
  }
  if (auto s = top.sub("skyeye")) {
    detail::StrictObject o(*s, "skyeye.");
    auto& g = c.skyeye.gan;
    o.get("enabled", c.skyeye.enabled);
    o.get("generator_arch", g.generator_arch);
    o.get("discriminator_arch", g.discriminator_arch);
    o.get("mu_d", g.mu_d);
    o.get("mu_c", g.mu_c);
    o.get("mu_f", g.mu_f);
    o.get("mu_r", g.mu_r);
    o.get("lr_G", g.lr_G);
    o.get("lr_D", g.lr_D);
    o.get("beta1", g.beta1);
    o.get("beta2", g.beta2);
    o.get("noise_dim", g.noise_dim);
    o.get("j_steps", g.j_steps);
    o.get("epochs", g.epochs);
    o.get("batch_size", g.batch_size);
    o.get("max_steps", g.max_steps);
    o.get("init_output_bias", g.init_output_bias);
    o.get("fidelity_samples", c.skyeye.fidelity_samples);
    o.get("tau_low", c.skyeye.tau_low);
    o.get("tau_high", c.skyeye.tau_high);
    o.get("grid_per_class", c.skyeye.grid_per_class);
    o.get("reference_rounds", c.skyeye.reference_rounds);
  }
  top.get("out", c.out);
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  FF_EXPECT(n_users >= 1, ConfigError, "n_users must be >= 1");
  FF_EXPECT(train.rounds >= 1 && train.local_epochs >= 1, ConfigError,
            "train.rounds and train.local_epochs must be >= 1");
  const auto& arch = find_arch(train.arch);
  FF_EXPECT(arch.role == ArchRole::classifier, ConfigError, "train.arch must be a classifier");
  train.opt.validate();
  unlearn.validate();
  for (const auto& t : unlearn.tap_layers) {
    const auto& taps = arch.tap_layers;
    FF_EXPECT(std::find(taps.begin(), taps.end(), t) != taps.end(), ConfigError,
              "unlearn.tap_layers: '" + t + "' is not a tap of " + arch.id);
  }
  if (forget.mode == ForgetMode::sample) {
    FF_EXPECT(forget.rate > 0 && forget.rate < 1, ConfigError, "forget.rate must lie in (0,1)");
  } else {
    FF_EXPECT(!forget.classes.empty(), ConfigError, "category mode needs forget.classes");
    for (int c : forget.classes)
      FF_EXPECT(c >= 0 && std::size_t(c) < arch.class_count, ConfigError,
                "forget.classes: class out of range");
  }
  for (int u : forget.users)
    FF_EXPECT(u >= 0 && u < n_users, ConfigError, "forget.users: user id out of range");
  FF_EXPECT(recovery.min_acc_factor > 0 && recovery.min_acc_factor <= 1 && recovery.max_iters >= 0,
            ConfigError, "invalid recovery settings");
  FF_EXPECT(retrain.rounds >= 0 && skyeye.reference_rounds >= 0, ConfigError,
            "round counts must be >= 0");
  if (skyeye.enabled) {
    skyeye.gan.validate();
    FF_EXPECT(skyeye.fidelity_samples >= 100, ConfigError, "skyeye.fidelity_samples must be >= 100");
    FF_EXPECT(0 <= skyeye.tau_low && skyeye.tau_low <= skyeye.tau_high && skyeye.tau_high <= 1,
              ConfigError, "need 0 <= tau_low <= tau_high <= 1");
    FF_EXPECT(skyeye.grid_per_class >= 1, ConfigError, "skyeye.grid_per_class must be >= 1");
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  FF_EXPECT(in, ConfigError, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline std::string canonical_dump(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("out");
  j["dataset"].erase("root");
  return j.dump();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  Fnv1a h;
  h.update(canonical_dump(c));
  return h.digest();
}

}  // namespace ff
