#pragma once

#include "corrnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace corrnet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  Index checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Entries probed per parameter tensor; 0 probes all of them.
  Index max_entries = 0;
  // Restrict the check to names starting with this prefix.
  std::string prefix;
};

/// Scalar objective evaluated on a fresh tape with the parameters bound to it.
using ScalarObjective = std::function<Var<double>(Tape<double>&, const Bound<double>&)>;

/// Compares reverse-mode gradients with central differences. The error for one entry is
/// |analytic - fd| / max(1, |fd|); the maximum over probed entries is returned.
inline GradCheckResult grad_check_fd(const ScalarObjective& f, const ParamStore<double>& params,
                                     const GradCheckOptions& opts = {}) {
  auto evaluate = [&](const ParamStore<double>& p) {
    Tape<double> tape(false);
    auto bound = tape.bind(p);
    const double v = f(tape, bound).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check_fd: non-finite objective value");
    return v;
  };

  GradMap<double> analytic;
  {
    Tape<double> tape;
    auto bound = tape.bind(params);
    auto loss = f(tape, bound);
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check_fd: non-finite objective value");
    analytic = tape.backward(loss);
  }

  GradCheckResult result;
  ParamStore<double> probe = params;
  for (const auto& [name, tensor] : params) {
    if (!opts.prefix.empty() && name.rfind(opts.prefix, 0) != 0) continue;
    const Index n = tensor.size();
    const Index stride =
        (opts.max_entries > 0 && n > opts.max_entries) ? (n + opts.max_entries - 1) / opts.max_entries : 1;
    for (Index i = 0; i < n; i += stride) {
      auto& entry = probe.at(name)[i];
      const double saved = entry;
      entry = saved + opts.step;
      const double up = evaluate(probe);
      entry = saved - opts.step;
      const double down = evaluate(probe);
      entry = saved;
      const double fd = (up - down) / (2.0 * opts.step);
      const double err = std::abs(analytic.at(name)[i] - fd) / std::max(1.0, std::abs(fd));
      ++result.checked;
      if (result.worst_index < 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace corrnet
