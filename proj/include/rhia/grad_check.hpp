#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rhia/tape.hpp"

namespace rhia {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

struct GradCheckOptions {
  double step = 1e-5;             // central-difference half width h
  double tolerance = 1e-4;        // pass iff max relative error < tolerance
  std::size_t max_coords = 0;     // per tensor; 0 checks every coordinate
  double abs_floor = 1e-6;        // denominator floor for near-zero gradients
  std::uint64_t seed = 1;
  std::size_t report_worst = 5;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  bool passed = false;
  std::vector<GradCheckEntry> worst;  // descending by rel_error

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << std::scientific << std::setprecision(3)
       << max_rel_error << " coords=" << checked;
    for (const auto& w : worst) {
      os << "\n  " << w.param << "[" << w.index << "] analytic=" << w.analytic << " numeric=" << w.numeric
         << " rel=" << w.rel_error;
    }
    return os.str();
  }
};

// Compares reverse-mode gradients of `loss_fn` against central finite
// differences (f(x+h) - f(x-h)) / 2h. `loss_fn` builds the loss on the tape it
// is handed and must be deterministic.
template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&)>& loss_fn,
                           const std::vector<NamedTensor<T>>& params, const GradCheckOptions& opt = {}) {
  for (const auto& p : params) p.tensor->zero_grad();
  {
    Tape<T> tape;
    tape.backward(loss_fn(tape));
  }
  auto eval = [&] {
    Tape<T> tape;
    return static_cast<double>(loss_fn(tape).scalar());
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  std::vector<GradCheckEntry> all;
  for (const auto& p : params) {
    Tensor<T>& t = *p.tensor;
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords && coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const T saved = t[i];
      t[i] = static_cast<T>(saved + opt.step);
      const double up = eval();
      t[i] = static_cast<T>(saved - opt.step);
      const double down = eval();
      t[i] = saved;
      GradCheckEntry e;
      e.param = p.name;
      e.index = i;
      e.analytic = static_cast<double>(t.grad()[i]);
      e.numeric = (up - down) / (2 * opt.step);
      const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), opt.abs_floor});
      e.rel_error = std::abs(e.analytic - e.numeric) / denom;
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      all.push_back(std::move(e));
    }
  }
  report.checked = all.size();
  report.passed = report.max_rel_error < opt.tolerance;
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  if (all.size() > opt.report_worst) all.resize(opt.report_worst);
  report.worst = std::move(all);
  return report;
}

}  // namespace rhia
