#include "pdisent/optimizer.hpp"

#include "pdisent/errors.hpp"

#include <cmath>

namespace pdisent {

void AdamOptimizer::step(ModelParams& params, const ModelParams& grads, double lr) {
  for (Group g : kAllGroups) {
    if (params.frozen(g)) continue;
    for (const auto& t : grads.group(g).tensors)
      for (std::size_t k = 0; k < t.data.size(); ++k)
        if (!std::isfinite(t.data[k]))
          throw DivergenceError("non-finite gradient in tensor '" + t.name + "' at element " +
                                std::to_string(k) + " (step " + std::to_string(steps_ + 1) + ")");
  }

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (Group g : kAllGroups) {
    if (params.frozen(g)) continue;
    auto& tensors = params.group(g).tensors;
    const auto& gtensors = grads.group(g).tensors;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& w = tensors[i].data;
      const auto& gr = gtensors[i].data;
      auto& m = moments_[tensors[i].name];
      if (m.first.size() != w.size()) {
        m.first.assign(w.size(), 0.0);
        m.second.assign(w.size(), 0.0);
      }
      for (std::size_t k = 0; k < w.size(); ++k) {
        m.first[k] = b1 * m.first[k] + (1.0 - b1) * gr[k];
        m.second[k] = b2 * m.second[k] + (1.0 - b2) * gr[k] * gr[k];
        w[k] -= lr * (m.first[k] / c1) / (std::sqrt(m.second[k] / c2) + config_.epsilon);
      }
    }
  }
}

}  // namespace pdisent
