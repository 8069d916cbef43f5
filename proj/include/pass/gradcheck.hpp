#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pass/tensor.hpp"

namespace pass {

struct GradCheckResult {
  std::string op;
  float max_rel_err = 0.0f;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  bool all_passed() const;
  std::string to_string() const;
};

// Central finite differences (eps) against the analytic gradient of a
// scalar-valued function of the given inputs. Returns the worst relative
// error across all input elements; denominators are floored at 0.1 so
// near-zero gradients compare absolutely.
float max_rel_error(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                    std::vector<Tensor> inputs, float eps = 1e-3f);

// Full finite-difference suite over every differentiable op and loss.
// `corrupt_conv` injects a known error into the conv kernel gradient, as
// a negative control for the reporting path.
GradCheckReport run_gradcheck(uint32_t seed, bool corrupt_conv = false);

}  // namespace pass
