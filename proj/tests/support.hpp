#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "fedforget/core/rng.hpp"
#include "fedforget/nn/params.hpp"

namespace fftest {

struct FdReport {
  int checked = 0;
  int kinks = 0;
  double worst = 0;
  std::string worst_at;
};

// Central-difference check of `analytic` against f at up to `per_tensor`
// randomly chosen coordinates of every tensor. Coordinates where the
// one-sided slopes disagree, or where the central difference changes with
// the step size, sit near a ReLU/max-pool kink and are skipped.
inline FdReport fd_check(const std::function<double(const ff::ParamVector<double>&)>& f,
                         const ff::ParamVector<double>& params,
                         const ff::ParamVector<double>& analytic, int per_tensor = 25,
                         double h = 1e-5, std::uint64_t seed = 7) {
  FdReport rep;
  auto rng = ff::make_rng(seed);
  ff::ParamVector<double> p = params;
  const double f0 = f(p);
  for (auto& [name, t] : p) {
    const auto n = t.numel();
    for (int k = 0; k < per_tensor && k < int(n); ++k) {
      std::size_t i = n <= std::size_t(per_tensor) ? std::size_t(k) : rng() % n;
      const double orig = t.data[i];
      t.data[i] = orig + h;
      const double fp = f(p);
      t.data[i] = orig - h;
      const double fm = f(p);
      t.data[i] = orig + h / 4;
      const double fp4 = f(p);
      t.data[i] = orig - h / 4;
      const double fm4 = f(p);
      t.data[i] = orig;
      const double num = (fp - fm) / (2 * h), num4 = (fp4 - fm4) / (h / 2);
      const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
      if (std::abs(fwd - bwd) > 1e-3 * (std::abs(fwd) + std::abs(bwd)) + 1e-4 ||
          std::abs(num - num4) > 2e-4 * std::max(std::abs(num), 1e-2)) {
        ++rep.kinks;
        continue;
      }
      const double a = analytic.at(name).data[i];
      const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-4});
      ++rep.checked;
      if (err > rep.worst) {
        rep.worst = err;
        rep.worst_at = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(num);
      }
    }
  }
  return rep;
}

#define EXPECT_FD_OK(rep, tol)                                                  \
  do {                                                                          \
    EXPECT_GT((rep).checked, 0);                                                \
    EXPECT_LE((rep).worst, (tol)) << (rep).worst_at;                            \
    EXPECT_LE((rep).kinks, (rep).checked / 5 + 2) << "too many kink points";    \
  } while (0)

}  // namespace fftest
