#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "cxr/net.hpp"

namespace cxr {

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool pass(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Central-difference check of the gradients already stored in each tensor's
// grad buffer. f() must evaluate the scalar objective from the tensors'
// current values without touching the grads. samples_per_tensor <= 0 checks
// every entry; otherwise that many entries are drawn per tensor (without
// replacement) from the given seed. rel_err = |a - n| / max(|a|, |n|, 1e-3);
// the floor makes the comparison absolute below the difference-quotient noise
// level of an O(1) objective.
GradCheckReport grad_check(const std::function<double()>& f,
                           std::span<ParamTensor* const> params,
                           int samples_per_tensor, double h,
                           std::uint64_t seed);

}  // namespace cxr
