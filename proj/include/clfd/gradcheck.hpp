#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "clfd/error.hpp"
#include "clfd/optim.hpp"
#include "clfd/rng.hpp"
#include "clfd/tensor.hpp"

namespace clfd {

struct GradCheckOptions {
  double h = 1e-5;          // central-difference step
  double tolerance = 1e-4;  // max relative error accepted
  // 0 checks every coordinate; otherwise at most this many coordinates per
  // parameter, chosen by a deterministic draw from `seed`.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  bool passed = true;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // description of the worst coordinate
};

// Verifies analytic gradients against central finite differences at 64-bit
// precision. `loss` must be a pure function of the parameter values;
// `analytic` is indexed like `params`. Relative error uses
// |a - n| / max(1, |a|, |n|) so near-zero gradients are compared absolutely.
template <class LossFn>
GradCheckResult grad_check(ParameterSet<double>& params,
                           const std::vector<Tensor<double>>& analytic,
                           LossFn&& loss, GradCheckOptions opt = {}) {
  check(analytic.size() == params.size(), ErrorCategory::internal,
        "grad_check: got ", analytic.size(), " gradient tensors for ",
        params.size(), " parameters");
  GradCheckResult res;
  Rng rng = Rng::stream(opt.seed, "gradcheck");
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    check(analytic[pi].shape == p.value.shape, ErrorCategory::internal,
          "grad_check: gradient shape mismatch for '", p.name, "'");
    const std::size_t n = p.value.numel();
    std::vector<std::size_t> coords;
    if (opt.max_coords_per_param == 0 || n <= opt.max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::unordered_set<std::size_t> seen;
      while (seen.size() < opt.max_coords_per_param)
        seen.insert(rng.uniform_index(n));
      coords.assign(seen.begin(), seen.end());
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double orig = p.value.data[c];
      p.value.data[c] = orig + opt.h;
      const double lp = loss(const_cast<const ParameterSet<double>&>(params));
      p.value.data[c] = orig - opt.h;
      const double lm = loss(const_cast<const ParameterSet<double>&>(params));
      p.value.data[c] = orig;
      const double numeric = (lp - lm) / (2.0 * opt.h);
      const double a = analytic[pi].data[c];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        std::ostringstream os;
        os << p.name << "[" << c << "]: analytic=" << a
           << " numeric=" << numeric << " rel=" << rel;
        res.worst = os.str();
      }
    }
  }
  res.passed = res.max_rel_err <= opt.tolerance;
  return res;
}

}  // namespace clfd
