#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "s3m/optim.hpp"
#include "s3m/rng.hpp"
#include "s3m/tensor.hpp"

namespace s3m {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per parameter tensor; 0 = all. Larger tensors are
  // sampled to keep the check fast.
  std::size_t max_coords_per_param = 0;
  std::uint64_t sample_seed = 17;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  bool finite = true;        // false if any value/grad came out non-finite
  std::string failure_note;  // identifies the offending coordinate

  bool pass(double tolerance) const { return finite && max_rel_error < tolerance; }
};

// Compares analytic gradients against central finite differences.
//
// `build` must construct a scalar loss on the tape from the current contents
// of `store`, deterministically. It is re-run with perturbed parameters, so
// any randomness must be frozen by the caller.
inline GradCheckReport gradcheck(
    ParamStore& store, const std::function<Tape::Node(Tape&)>& build,
    const GradCheckOptions& opts = {}) {
  GradCheckReport rep;

  Tape tape;
  store.zero_grads();
  Tape::Node loss = build(tape);
  double base = tape.scalar(loss);
  if (!std::isfinite(base)) {
    rep.finite = false;
    rep.failure_note = "loss is non-finite at the base point";
    return rep;
  }
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(store.count());
  for (std::size_t p = 0; p < store.count(); ++p) analytic.push_back(store.at(p).grad);
  store.zero_grads();

  auto eval = [&]() {
    tape.clear();
    Tape::Node n = build(tape);
    double v = tape.scalar(n);
    tape.clear();
    return v;
  };

  Rng rng(opts.sample_seed);
  for (std::size_t p = 0; p < store.count(); ++p) {
    Tensor& param = store.at(p);
    std::size_t n = param.size();
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_param == 0 || n <= opts.max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < opts.max_coords_per_param; ++i)
        coords.push_back(rng.next_index(n));
    }

    for (std::size_t c : coords) {
      double saved = param.values[c];
      param.values[c] = saved + opts.step;
      double up = eval();
      param.values[c] = saved - opts.step;
      double down = eval();
      param.values[c] = saved;

      double numeric = (up - down) / (2.0 * opts.step);
      double a = analytic[p][c];
      rep.coords_checked += 1;

      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        rep.finite = false;
        rep.failure_note = store.names()[p] + "[" + std::to_string(c) +
                           "] is non-finite (analytic=" + std::to_string(a) +
                           ", numeric=" + std::to_string(numeric) + ")";
        return rep;
      }

      // Relative error with an absolute floor so that near-zero gradients
      // are compared on an absolute scale.
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = store.names()[p];
        rep.worst_coord = c;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace s3m
