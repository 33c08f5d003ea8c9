#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "spanedit/errors.hpp"
#include "spanedit/narray.hpp"
#include "spanedit/tape.hpp"

namespace spanedit::ad {

// A scalar function of a list of parameter arrays, built on the given tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

namespace detail {

inline double evaluate(const ScalarFn& f, const std::vector<NArray>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const NArray& p : params) vars.push_back(tape.constant_ref(p));
  const double v = f(tape, vars).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace detail

// Compares reverse-mode gradients with five-point central differences
// (truncation error O(eps^4), so a fairly large step keeps round-off small).
// The relative error of one coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<NArray> params, double eps = 1e-3) {
  std::vector<NArray> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const NArray& p : params) vars.push_back(tape.variable_ref(p));
    Var loss = f(tape, vars);
    if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: function value is not finite");
    tape.backward(loss);
    for (const Var& v : vars) {
      const NArray* g = tape.grad_if_any(v.id());
      analytic.push_back(g ? *g : NArray(v.shape(), 0.0));
    }
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      auto at = [&](double offset) {
        params[p][i] = orig + offset;
        return detail::evaluate(f, params);
      };
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps);
      params[p][i] = orig;
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++report.coordinates;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = p;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace spanedit::ad
