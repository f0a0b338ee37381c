#pragma once

// Experiment pipeline: train -> (poison) -> unlearn -> retrain -> eval ->
// optional Skyeye. Artifacts go to <out>/<config hash>/:
//
//   config.json      the resolved config
//   report.ndjson    one JSON object per line, deterministic for a config
//   log.ndjson       per-round / per-epoch progress records with timings
//   manifest.json    {"config_hash": ..., "artifacts": [...]}
//   *.ckpt           checkpoints (see nn/checkpoint.hpp)
//   grid.png         Skyeye sample grid

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedforget/data/loaders.hpp"
#include "fedforget/evalkit/metrics.hpp"
#include "fedforget/fedsim/federation.hpp"
#include "fedforget/harness/config.hpp"
#include "fedforget/nn/checkpoint.hpp"
#include "fedforget/skyeye/grid.hpp"
#include "fedforget/skyeye/skyeye.hpp"

namespace ff {

inline json to_json(const MetricsReport& m) {
  json j = json::object();
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("acc_Dr", m.acc_Dr);
  put("acc_Df", m.acc_Df);
  put("backdoor_asr", m.backdoor_asr);
  put("mia_success", m.mia_success);
  put("jsd_vs_retrain", m.jsd_vs_retrain);
  put("l2_vs_retrain", m.l2_vs_retrain);
  for (const auto& [c, f] : m.class_fidelity) j["fidelity_" + std::to_string(c)] = f;
  if (m.decision) j["decision"] = *m.decision;
  for (const auto& [k, v] : m.context) j[k] = v;
  return j;
}

class RunDir {
 public:
  RunDir(const std::filesystem::path& dir, std::string hash, bool fresh)
      : dir_(dir), hash_(std::move(hash)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    FF_EXPECT(!ec, IoError, "cannot create " + dir_.string() + ": " + ec.message());
    read_manifest();
    const auto mode = fresh ? std::ios::trunc : std::ios::app;
    report_.open(dir_ / "report.ndjson", std::ios::out | mode);
    log_.open(dir_ / "log.ndjson", std::ios::out | mode);
    FF_EXPECT(report_ && log_, IoError, "cannot open report/log in " + dir_.string());
    if (fresh) artifacts_.clear();
    add("report.ndjson");
    add("log.ndjson");
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  void report(json j) {
    j["config_hash"] = hash_;
    report_ << j.dump() << '\n';
    report_.flush();
  }
  void log(json j) {
    log_ << j.dump() << '\n';
    log_.flush();
  }
  void add(const std::string& name) {
    artifacts_.insert(name);
    write_manifest();
  }

 private:
  void read_manifest() {
    std::ifstream in(dir_ / "manifest.json");
    if (!in) return;
    try {
      auto j = json::parse(in);
      for (const auto& a : j.at("artifacts")) artifacts_.insert(a.get<std::string>());
    } catch (const json::exception&) {
    }
  }
  void write_manifest() {
    json j{{"config_hash", hash_}, {"artifacts", artifacts_}};
    std::ofstream out(dir_ / "manifest.json", std::ios::trunc);
    FF_EXPECT(out, IoError, "cannot write manifest in " + dir_.string());
    out << j.dump(2) << '\n';
  }

  std::filesystem::path dir_;
  std::string hash_;
  std::ofstream report_, log_;
  std::set<std::string> artifacts_;
};

struct UnlearnOutcome {
  ParamVector<float> raw{""};        // straight after the unlearning round
  ParamVector<float> unlearned{""};  // after performance recovery
  FederationState state;             // users hold only D_r
  LabeledDataset forget;             // D_f, concatenated over users
  double pre_mean_user_acc = 0;
  std::optional<RecoveryResult> recovery;
};

struct SkyeyeOutcome {
  std::map<int, double> fidelity;
  std::optional<Decision> decision;
  std::string grid;
};

struct ExperimentResult {
  std::string config_hash;
  std::filesystem::path dir;
  std::map<std::string, MetricsReport> metrics;  // original, unlearned_raw, unlearned, retrain
  std::optional<SkyeyeOutcome> skyeye;
  std::optional<std::string> failure;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg, bool fresh = false)
      : cfg_(validated(std::move(cfg))),
        hash_(hex64(config_hash(cfg_))),
        run_(std::filesystem::path(cfg_.out) / hash_, hash_, fresh) {
    std::ofstream out(run_.path("config.json"), std::ios::trunc);
    FF_EXPECT(out, IoError, "cannot write config.json");
    out << to_json(cfg_).dump(2) << '\n';
    out.close();
    run_.add("config.json");
  }

  const ExperimentConfig& config() const { return cfg_; }
  RunDir& run() { return run_; }
  const std::string& hash() const { return hash_; }

  const DatasetSplits& data() {
    if (!data_) data_ = load_dataset(cfg_.dataset, cfg_.resolved_data_root(), cfg_.seeds.data);
    return *data_;
  }
  const ArchSpec& arch() const { return find_arch(cfg_.train.arch); }

  TriggerSpec trigger() {
    return TriggerSpec::bottom_right(data().train.shape(), cfg_.forget.trigger_size,
                                     cfg_.forget.trigger_target);
  }

  std::vector<int> forget_users() const {
    if (!cfg_.forget.users.empty()) return cfg_.forget.users;
    std::vector<int> all(std::size_t(cfg_.n_users));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }

  // Partitioned training data; in sample mode the forgetting users' shards
  // carry the backdoor.
  std::vector<UserShard> shards() {
    auto s = partition_uniform(data().train, cfg_.n_users, cfg_.seeds.data);
    if (cfg_.forget.mode == ForgetMode::sample)
      for (int u : forget_users()) {
        auto& shard = s[std::size_t(u)];
        shard = poison_shard(shard, cfg_.forget.rate, trigger(), cfg_.seeds.poison);
      }
    return s;
  }

  FederationConfig fed_config() const {
    FederationConfig f;
    f.local_epochs = cfg_.train.local_epochs;
    f.opt = cfg_.train.opt;
    f.unlearn = cfg_.unlearn;
    f.seed = cfg_.seeds.train;
    return f;
  }

  FederationState train() {
    auto t0 = clock();
    auto s = make_federation(arch(), shards(), cfg_.seeds.model);
    auto fc = fed_config();
    for (int r = 0; r < cfg_.train.rounds; ++r) {
      s = run_round(std::move(s), fc);
      log_round(s.history.back());
    }
    save("original.ckpt", s.global, "model=" + std::to_string(cfg_.seeds.model) +
                                        ";rounds=" + std::to_string(cfg_.train.rounds));
    stage_done("train", t0);
    return s;
  }

  // Federation state as it stands after training, with the global model
  // taken from a checkpoint.
  FederationState trained_from(const std::filesystem::path& ckpt) {
    auto s = make_federation(arch(), shards(), cfg_.seeds.model);
    auto c = load_checkpoint(ckpt);
    s.initial.require_same_layout(c.params, "trained checkpoint");
    s.global = std::move(c.params);
    s.round = cfg_.train.rounds;
    return s;
  }

  LabeledDataset forget_set(const std::vector<UserShard>& shards) const {
    LabeledDataset out("D_f", shards.front().data.class_count(), shards.front().data.shape());
    for (int u : forget_users()) {
      const auto& sh = shards[std::size_t(u)];
      auto split = cfg_.forget.mode == ForgetMode::sample
                       ? split_forget(sh, ForgetMode::sample)
                       : split_forget(sh, ForgetMode::category, cfg_.forget.classes);
      out.append(split.forget);
    }
    return out;
  }

  UnlearnOutcome unlearn(FederationState s) {
    auto t0 = clock();
    UnlearnOutcome o;
    o.forget = forget_set(s.shards);
    const auto acc = user_accuracies(s.global, s.shards);
    o.pre_mean_user_acc = std::accumulate(acc.begin(), acc.end(), 0.0) / double(acc.size());
    for (int u : forget_users()) {
      const auto& sh = s.shards[std::size_t(u)];
      if (cfg_.forget.mode == ForgetMode::sample)
        request_deletion(s, poisoned_request(sh));
      else
        request_deletion(s, {sh.user_id, ForgetMode::category, {}, cfg_.forget.classes});
    }
    auto fc = fed_config();
    s = run_round(std::move(s), fc, [&](const UnlearnEpochRecord& r) {
      run_.log({{"event", "unlearn_epoch"}, {"epoch", r.epoch}, {"lr", r.lr}, {"D", r.distill},
                {"AMA", r.ama}, {"H", r.hard}, {"reg", r.reg}, {"total", r.total},
                {"ama_skipped", r.ama_skipped}, {"skip_warning", r.skip_warning}});
    });
    log_round(s.history.back());
    o.raw = s.global;
    save("unlearned_raw.ckpt", o.raw, "unlearn_round=" + std::to_string(s.round - 1));
    if (cfg_.recovery.enabled) {
      const double min_acc = cfg_.recovery.min_acc_factor * o.pre_mean_user_acc;
      o.recovery = performance_recovery(s, fc, min_acc, cfg_.recovery.max_iters);
      run_.log({{"event", "recovery"}, {"min_acc", min_acc}, {"iterations", o.recovery->iterations},
                {"reached", o.recovery->reached}, {"warning", o.recovery->warning},
                {"min_accuracy_trajectory", o.recovery->min_accuracy_trajectory},
                {"fine_tuned_users", o.recovery->fine_tuned_users}});
      s = o.recovery->state;
    }
    o.unlearned = s.global;
    o.state = std::move(s);
    save("unlearned.ckpt", o.unlearned, "recovery=" + std::to_string(cfg_.recovery.enabled));
    stage_done("unlearn", t0);
    return o;
  }

  // Shards with every deletion applied, as the users hold them afterwards.
  std::vector<UserShard> remaining_shards() {
    auto s = shards();
    for (int u : forget_users()) {
      auto& sh = s[std::size_t(u)];
      auto split = cfg_.forget.mode == ForgetMode::sample
                       ? split_forget(sh, ForgetMode::sample)
                       : split_forget(sh, ForgetMode::category, cfg_.forget.classes);
      sh = keep_remaining(sh, split);
    }
    return s;
  }

  ParamVector<float> retrain(const std::vector<UserShard>& remaining) {
    auto t0 = clock();
    auto p = retrain_baseline(remaining, arch(), cfg_.retrain_rounds(), fed_config(), cfg_.seeds.retrain);
    save("retrain.ckpt", p, "model=" + std::to_string(cfg_.seeds.retrain) +
                                ";rounds=" + std::to_string(cfg_.retrain_rounds()));
    stage_done("retrain", t0);
    return p;
  }

  // Metrics for one model. D_f is the forgotten training data; D_r is the
  // matching part of the test split.
  MetricsReport evaluate(const ParamVector<float>& params, const std::string& label,
                         const LabeledDataset& forget, const ParamVector<float>* retrained) {
    MetricsReport m;
    const auto& test = data().test;
    const auto seed = cfg_.seeds.eval;
    if (cfg_.forget.mode == ForgetMode::category) {
      const auto& cls = cfg_.forget.classes;
      auto te_f = test.filter_classes(cls, true), te_r = test.filter_classes(cls, false);
      m.acc_Dr = accuracy(params, te_r);
      m.acc_Df = accuracy(params, te_f);
      if (forget.size() >= 30 && te_f.size() >= 30)
        m.mia_success = mia_success(params, forget, te_f, seed).success;
    } else {
      m.acc_Dr = accuracy(params, test);
      m.acc_Df = forget.empty() ? std::optional<double>() : accuracy(params, forget);
      m.backdoor_asr = backdoor_asr(params, test, trigger());
      auto holdout = triggered_copy(test, trigger());
      if (forget.size() >= 30 && holdout.size() >= 30)
        m.mia_success = mia_success(params, forget, holdout, seed).success;
    }
    if (retrained && !forget.empty()) {
      auto d = pred_distribution_distance(params, *retrained, forget);
      m.jsd_vs_retrain = d.jsd_mean;
      m.l2_vs_retrain = d.l2_mean;
    }
    m.context["model"] = label;
    return m;
  }

  void report_metrics(const MetricsReport& m) {
    auto j = to_json(m);
    j["record"] = "metrics";
    run_.report(j);
  }

  // Independently trained full-data classifier used to score generated
  // samples.
  ParamVector<float> reference_classifier() {
    auto t0 = clock();
    auto clean = partition_uniform(data().train, cfg_.n_users, cfg_.seeds.data);
    auto p = retrain_baseline(clean, arch(), cfg_.reference_rounds(), fed_config(), cfg_.seeds.reference);
    save("reference.ckpt", p, "model=" + std::to_string(cfg_.seeds.reference));
    stage_done("reference", t0);
    return p;
  }

  GanBundle skyeye_train(const ParamVector<float>& classifier) {
    auto t0 = clock();
    auto g = cfg_.skyeye.gan;
    g.seed = cfg_.seeds.gan;
    auto b = train_skyeye(classifier, data().train, g, [&](const GanEpochRecord& r) {
      run_.log({{"event", "gan_epoch"}, {"epoch", r.epoch}, {"steps", r.steps},
                {"loss_G", r.loss_G}, {"loss_D", r.loss_D}});
    });
    save("generator.ckpt", b.generator, "gan=" + std::to_string(g.seed));
    save("discriminator.ckpt", b.discriminator, "gan=" + std::to_string(g.seed));
    stage_done("skyeye_train", t0);
    return b;
  }

  SkyeyeOutcome skyeye_report(const ParamVector<float>& generator, const ParamVector<float>* reference,
                              const std::vector<int>& classes, const std::filesystem::path& grid) {
    SkyeyeOutcome o;
    const auto seed = cfg_.seeds.eval;
    render_grid(generator, classes, cfg_.skyeye.grid_per_class, grid.string(), seed);
    o.grid = grid.string();
    if (grid.parent_path() == run_.dir()) run_.add(grid.filename().string());
    if (reference) {
      for (int c : classes)
        o.fidelity[c] = class_fidelity(generator, *reference, c, cfg_.skyeye.fidelity_samples, seed);
      if (cfg_.forget.mode == ForgetMode::category && o.fidelity.size() == arch().class_count) {
        o.decision = decide(o.fidelity, cfg_.forget.classes, cfg_.skyeye.tau_low, cfg_.skyeye.tau_high);
        o.decision->grid_path = o.grid;
      }
      json j{{"record", "skyeye"}};
      for (const auto& [c, f] : o.fidelity) j["fidelity_" + std::to_string(c)] = f;
      if (o.decision) {
        j["decision"] = o.decision->verdict;
        j["diagnostic"] = o.decision->diagnostic;
      }
      run_.report(j);
    }
    return o;
  }

  ExperimentResult run_all() {
    ExperimentResult res;
    res.config_hash = hash_;
    res.dir = run_.dir();
    std::string stage = "train";
    try {
      auto trained = train();
      const auto original = trained.global;
      stage = "unlearn";
      auto u = unlearn(std::move(trained));
      std::optional<ParamVector<float>> re;
      if (cfg_.retrain.enabled) {
        stage = "retrain";
        re = retrain(u.state.shards);
      }
      stage = "eval";
      const ParamVector<float>* rp = re ? &*re : nullptr;
      res.metrics["original"] = evaluate(original, "original", u.forget, rp);
      res.metrics["unlearned_raw"] = evaluate(u.raw, "unlearned_raw", u.forget, rp);
      res.metrics["unlearned"] = evaluate(u.unlearned, "unlearned", u.forget, rp);
      if (re) res.metrics["retrain"] = evaluate(*re, "retrain", u.forget, rp);
      for (const auto& [_, m] : res.metrics) report_metrics(m);
      if (cfg_.skyeye.enabled) {
        stage = "skyeye";
        auto ref = reference_classifier();
        auto b = skyeye_train(u.unlearned);
        std::vector<int> all(arch().class_count);
        std::iota(all.begin(), all.end(), 0);
        res.skyeye = skyeye_report(b.generator, &ref, all, run_.path("grid.png"));
      }
    } catch (const std::exception& e) {
      res.failure = stage + ": " + e.what();
      run_.report({{"record", "failure"}, {"stage", stage}, {"error", e.what()}});
    }
    return res;
  }

 private:
  static ExperimentConfig validated(ExperimentConfig c) {
    c.validate();
    return c;
  }
  using Clock = std::chrono::steady_clock;
  static Clock::time_point clock() { return Clock::now(); }
  void stage_done(const char* name, Clock::time_point t0) {
    run_.log({{"event", "stage"}, {"stage", name},
              {"seconds", std::chrono::duration<double>(clock() - t0).count()}});
  }
  void log_round(const RoundRecord& r) {
    json j{{"event", "round"}, {"round", r.round}, {"kind", r.kind}};
    if (!r.user_accuracy.empty()) {
      j["user_accuracy"] = r.user_accuracy;
      j["mean_user_accuracy"] =
          std::accumulate(r.user_accuracy.begin(), r.user_accuracy.end(), 0.0) / double(r.user_accuracy.size());
    }
    if (r.kind == "unlearn") j["forgotten"] = r.forgotten;
    run_.log(j);
  }
  void save(const std::string& name, const ParamVector<float>& p, const std::string& lineage) {
    save_checkpoint(run_.path(name), p, lineage);
    run_.add(name);
  }

  ExperimentConfig cfg_;
  std::string hash_;
  RunDir run_;
  std::optional<DatasetSplits> data_;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Experiment e(cfg, /*fresh=*/true);
  return e.run_all();
}

}  // namespace ff
