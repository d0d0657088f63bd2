#pragma once

#include "pdisent/network.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pdisent {

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t max_per_tensor = 1000;
  std::uint64_t seed = 3;
};

struct TensorCheck {
  std::string tensor;
  std::size_t checked = 0;
  double max_rel = 0.0;
  double mean_rel = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  std::size_t checked = 0;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  std::string worst_tensor;
};

using ScalarLoss = std::function<double(const ModelParams&)>;

/// |a - n| / max(|a|, |n|, 1e-6) with n the central difference (L(w+e) - L(w-e)) / 2e.
double relative_error(double analytic, double numeric);

/// Compares `analytic` against central differences of `loss` for up to
/// max_per_tensor sampled scalars of every tensor in an unfrozen group.
GradCheckReport gradient_check(const ScalarLoss& loss, const ModelParams& params, const ModelParams& analytic,
                               const GradCheckOptions& options = {});

/// Small network used for finite-difference checks of the training losses.
ArchConfig reduced_arch();

struct LossCheck {
  std::string loss;
  GradCheckReport report;
};

/// Gradient checks of the multi-task, reconstruction and L2 pair objectives
/// on a reduced network with random inputs.
std::vector<LossCheck> check_training_losses(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace pdisent
