#pragma once

#include <cstdint>
#include <vector>

#include "cxr/net.hpp"

namespace cxr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed parameter list. A step with any
// non-finite gradient entry is rejected outright: parameters, moments and the
// step counter stay untouched and step() returns false.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamTensor*> params, AdamConfig cfg = {});

  bool step();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Checkpoint access: first and second moments in parameter-list order.
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }
  const std::vector<std::vector<double>>& moment1() const { return m_; }
  const std::vector<std::vector<double>>& moment2() const { return v_; }
  void restore(std::uint64_t step_count) { t_ = step_count; }

 private:
  std::vector<ParamTensor*> params_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct PlateauConfig {
  double factor = 0.1;
  int patience = 3;
  double min_delta = 1e-4;
  double min_lr = 1e-6;
};

// Reduce-on-plateau: after `patience` consecutive updates without the metric
// improving below best - min_delta, the rate is multiplied by `factor`
// (floored at min_lr). Never increases the rate.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(PlateauConfig cfg = {}) : cfg_(cfg) {}

  double update(double metric, double current_lr);
  bool reduced_last_update() const { return reduced_; }

  const PlateauConfig& config() const { return cfg_; }
  double best() const { return best_; }
  int bad_updates() const { return bad_; }
  bool primed() const { return primed_; }
  void restore(double best, int bad, bool primed) {
    best_ = best;
    bad_ = bad;
    primed_ = primed;
  }

 private:
  PlateauConfig cfg_;
  double best_ = 0.0;
  int bad_ = 0;
  bool primed_ = false;
  bool reduced_ = false;
};

}  // namespace cxr
