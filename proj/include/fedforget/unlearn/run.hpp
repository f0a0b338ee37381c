#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/dataset.hpp"
#include "fedforget/unlearn/losses.hpp"

namespace ff {

struct UnlearnEpochRecord {
  int epoch = 0;
  double lr = 0;
  double distill = 0, ama = 0, hard = 0, reg = 0, total = 0;  // batch means
  std::size_t ama_skipped = 0;
  bool skip_warning = false;  // some batch skipped more than 10% of its samples
};

// Raised when the objective turns non-finite; carries the last finite student.
struct UnlearnDiverged : NumericError {
  UnlearnDiverged(const std::string& msg, ParamVector<float> last)
      : NumericError(msg), last_finite(std::move(last)) {}
  ParamVector<float> last_finite;
};

struct UnlearnResult {
  ParamVector<float> params{""};
  std::vector<UnlearnEpochRecord> epochs;
};

using UnlearnObserver = std::function<void(const UnlearnEpochRecord&)>;

// Trains the student (initialized from `global`) on D_f against the frozen
// teacher; `global` doubles as the regularizer anchor.
inline UnlearnResult run_unlearn(const ParamVector<float>& global, const ParamVector<float>& teacher,
                                 const LabeledDataset& forget, const UnlearnConfig& cfg,
                                 const UnlearnObserver& observe = {}) {
  cfg.validate();
  FF_EXPECT(!forget.empty(), ContractError, "run_unlearn: D_f is empty");
  UnlearnResult res;
  res.params = global;
  auto rng = make_rng(cfg.seed, {0x0f0f});
  std::vector<std::size_t> order(forget.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = cfg.lr_unlearn;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    UnlearnEpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    std::size_t batches = 0;
    for_each_chunk(std::span<const std::size_t>(order), cfg.batch_size, [&](auto idx) {
      auto b = make_batch<float>(forget, idx);
      auto g = res.params.zeros_like();
      auto terms = unlearn_objective(teacher, res.params, global, b, cfg, &g);
      if (!std::isfinite(terms.total) || !g.all_finite()) {
        std::ostringstream msg;
        msg << "unlearning diverged at epoch " << e << " batch " << batches
            << ": D=" << terms.distill << " AMA=" << terms.ama << " H=" << terms.hard
            << " reg=" << terms.reg;
        throw UnlearnDiverged(msg.str(), res.params);
      }
      res.params.axpy(float(-lr), g);
      rec.distill += terms.distill;
      rec.ama += terms.ama;
      rec.hard += terms.hard;
      rec.reg += terms.reg;
      rec.total += terms.total;
      rec.ama_skipped += terms.ama_skipped;
      if (cfg.mu_AMA > 0 && terms.ama_skipped * 10 > terms.ama_skipped + terms.ama_evaluated)
        rec.skip_warning = true;
      ++batches;
    });
    for (double* v : {&rec.distill, &rec.ama, &rec.hard, &rec.reg, &rec.total}) *v /= double(batches);
    res.epochs.push_back(rec);
    if (observe) observe(rec);
    if (cfg.lr_decay) lr *= cfg.lr_decay_factor;
  }
  return res;
}

}  // namespace ff
