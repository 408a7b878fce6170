#pragma once

#include <cstdint>
#include <vector>

#include "tabrec/tensor.hpp"

namespace tabrec {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Holds one (m, v) slot per
/// parameter; a parameter without a gradient is treated as having a zero one.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config = {});

  void step(double lr);
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::size_t slots() const { return params_.size(); }

  std::vector<T>& first_moment(std::size_t i) { return m_.at(i); }
  std::vector<T>& second_moment(std::size_t i) { return v_.at(i); }
  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }
  void set_step_count(std::uint64_t step) { step_ = step; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamConfig config_;
  std::uint64_t step_ = 0;
};

/// Piecewise-constant schedule: `base` until `decay_epoch`, then base * factor.
struct StepSchedule {
  double base = 1e-3;
  int decay_epoch = 12;
  double factor = 0.1;

  double at(int epoch) const { return epoch < decay_epoch ? base : base * factor; }
};

}  // namespace tabrec
