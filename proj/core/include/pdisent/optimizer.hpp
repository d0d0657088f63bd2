#pragma once

#include "pdisent/network.hpp"

#include <map>
#include <string>
#include <vector>

namespace pdisent {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moments are kept per
/// tensor name and only for tensors whose group is unfrozen at step time.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}

  /// Applies one update. Throws DivergenceError naming the first tensor with a
  /// non-finite gradient, before any parameter is touched.
  void step(ModelParams& params, const ModelParams& grads, double lr);

  long step_count() const { return steps_; }
  bool has_state(const std::string& tensor) const { return moments_.count(tensor) != 0; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  AdamConfig config_;
  std::map<std::string, Moments> moments_;
  long steps_ = 0;
};

}  // namespace pdisent
