#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gtn/layers.hpp"
#include "gtn/rng.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

/// A tensor to perturb, paired with its analytic gradient.
struct GradTarget {
  std::string name;
  Tensor* value;
  Tensor analytic;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_target;
  std::size_t worst_index = 0;
};

/**
 * Central finite differences of a scalar loss against analytic gradients.
 *
 * For every entry of every target: numeric = (L(v+h) - L(v-h)) / 2h and
 * relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
 * The loss closure must re-evaluate the full forward pass from the current
 * tensor contents and must be deterministic.
 */
inline GradCheckReport grad_check_targets(const std::function<double()>& loss,
                                          std::vector<GradTarget>& targets, double h = 1e-5) {
  constexpr double kFloor = 1e-8;
  GradCheckReport report;
  for (auto& target : targets) {
    if (!target.value->same_shape(target.analytic)) {
      throw ShapeError("grad_check: analytic gradient shape mismatch for " + target.name);
    }
    for (std::size_t i = 0; i < target.value->size(); ++i) {
      double& slot = (*target.value)[i];
      const double original = slot;
      slot = original + h;
      const double up = loss();
      slot = original - h;
      const double down = loss();
      slot = original;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss while perturbing " + target.name);
      }
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = target.analytic[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), kFloor});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_target = target.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

/// Random input with entry magnitudes in [0.1, 1) so finite differences do
/// not straddle the relu kink at zero.
inline Tensor grad_check_input(Rng& rng, const Shape& shape) {
  Tensor x(shape);
  for (double& v : x.values()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return x;
}

/**
 * Finite-difference check of one layer: the probe loss is
 * sum(forward(x) * R) for a fixed random R, so dL/dy = R exactly.
 * Checks the input gradient and every parameter gradient; returns the max
 * relative error. Stochastic layers must be checked in eval mode or with a
 * frozen mask.
 */
inline GradCheckReport grad_check_layer(Layer& layer, const Shape& input_shape, Rng& rng,
                                        Mode mode = Mode::kEval, double h = 1e-5) {
  Tensor x = grad_check_input(rng, input_shape);
  layer.zero_grad();
  Tensor y = layer.forward(x, mode);
  Tensor probe = rand_uniform(rng, y.shape(), -1.0, 1.0);
  Tensor dx = layer.backward(probe);

  std::vector<GradTarget> targets;
  targets.push_back({"input", &x, dx});
  for (ParamRef p : layer.params()) targets.push_back({p.name, p.value, *p.grad});

  auto loss = [&]() { return sum(mul(layer.forward(x, mode), probe)); };
  return grad_check_targets(loss, targets, h);
}

}  // namespace gtn
