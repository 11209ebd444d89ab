#pragma once

#include <vector>

#include "gtn/grad_check.hpp"
#include "gtn/model.hpp"

namespace gtn {

/**
 * Finite-difference check of the full model against the combined loss.
 * Dropout is forced into eval behavior so the loss is deterministic; batch
 * normalization (if present) runs in whichever mode is given. Checks the
 * input gradient and every parameter of every group.
 */
inline GradCheckReport grad_check_model(GtnModel& model, const Tensor& input,
                                        const std::vector<int>& labels, Mode mode = Mode::kTrain,
                                        double h = 1e-5) {
  Tensor x = input;
  model.set_dropout_eval_override(true);
  model.zero_grad();
  model.forward(x, mode);
  Tensor dx = model.backward(labels);

  std::vector<GradTarget> targets;
  targets.push_back({"input", &x, dx});
  for (ParamRef p : model.params()) targets.push_back({p.name, p.value, *p.grad});

  auto loss = [&]() { return model.loss_value(x, labels, mode); };
  GradCheckReport report = grad_check_targets(loss, targets, h);
  model.set_dropout_eval_override(false);
  return report;
}

}  // namespace gtn
