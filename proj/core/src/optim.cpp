#include "cxr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cxr {

AdamOptimizer::AdamOptimizer(std::vector<ParamTensor*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0.0 || cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 ||
      cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0 || cfg_.eps <= 0.0) {
    throw std::invalid_argument("invalid Adam configuration");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ParamTensor* p : params_) {
    m_.emplace_back(p->count(), 0.0);
    v_.emplace_back(p->count(), 0.0);
  }
}

bool AdamOptimizer::step() {
  for (const ParamTensor* p : params_) {
    for (const double g : p->grad) {
      if (!std::isfinite(g)) return false;
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ParamTensor& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.count(); ++k) {
      const double g = p.grad[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return true;
}

double PlateauScheduler::update(double metric, double current_lr) {
  reduced_ = false;
  if (!primed_) {
    primed_ = true;
    best_ = metric;
    return current_lr;
  }
  if (metric < best_ - cfg_.min_delta) {
    best_ = metric;
    bad_ = 0;
    return current_lr;
  }
  ++bad_;
  if (bad_ >= cfg_.patience) {
    bad_ = 0;
    const double next = std::max(cfg_.min_lr, current_lr * cfg_.factor);
    if (next < current_lr) reduced_ = true;
    return next;
  }
  return current_lr;
}

}  // namespace cxr
