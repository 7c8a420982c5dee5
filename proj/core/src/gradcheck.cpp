#include "cxr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "cxr/rng.hpp"

namespace cxr {

GradCheckReport grad_check(const std::function<double()>& f,
                           std::span<ParamTensor* const> params,
                           int samples_per_tensor, double h,
                           std::uint64_t seed) {
  if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
  Rng rng(derive_seed(seed, "grad_check"));
  GradCheckReport report;
  for (ParamTensor* p : params) {
    const std::size_t n = p->count();
    if (n == 0) continue;
    std::vector<std::size_t> idx;
    if (samples_per_tensor <= 0 || static_cast<std::size_t>(samples_per_tensor) >= n) {
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
      // Partial Fisher-Yates: first k slots of a shuffled identity.
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (int k = 0; k < samples_per_tensor; ++k) {
        const std::size_t j = k + rng.below(n - k);
        std::swap(idx[k], idx[j]);
      }
      idx.resize(samples_per_tensor);
    }
    for (const std::size_t i : idx) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double fp = f();
      p->value[i] = saved - h;
      const double fm = f();
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p->grad[i];
      // The 1e-3 floor turns the comparison absolute for near-zero gradients,
      // where a central difference of an O(1) objective is dominated by
      // cancellation noise (~1e-9 for h around 1e-6) rather than the
      // derivative being measured.
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_name = p->name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace cxr
