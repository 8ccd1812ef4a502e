#pragma once

// Central finite-difference oracle used by the gradient tests. It only sees
// a scalar function of a flat coordinate vector, so it is independent of the
// tape implementation it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace d2l::testkit {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose +/-h probe crossed a rectifier kink
};

/// Relative error with a small floor so that vanishing gradients compare on
/// an absolute scale.
inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// `coords` are perturbed in place and restored. `f` evaluates the loss;
/// `pattern` (optional) returns the rectifier on/off pattern so coordinates
/// whose probes change it can be skipped.
inline GradCheck central_difference(std::vector<double*> coords, const std::vector<double>& analytic,
                                    const std::function<double()>& f,
                                    const std::function<std::vector<bool>()>& pattern = {}, double h = 1e-5) {
  GradCheck out;
  const std::vector<bool> base = pattern ? pattern() : std::vector<bool>{};
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& x = *coords[i];
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    const bool kink_p = pattern && pattern() != base;
    x = x0 - h;
    const double fm = f();
    const bool kink_m = pattern && pattern() != base;
    x = x0;
    if (kink_p || kink_m) {
      ++out.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, rel_error(analytic[i], numeric));
    ++out.checked;
  }
  return out;
}

}  // namespace d2l::testkit
