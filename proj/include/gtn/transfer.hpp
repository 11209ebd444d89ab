#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "gtn/error.hpp"
#include "gtn/layers.hpp"
#include "gtn/rng.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

/// How the transfer module combines its gate with the incoming features.
enum class GateVariant {
  kGated,         // y = gate(x) * x, the default multiplicative form
  kResidual,      // y = F(x) + x, the residual-block ablation
  kIdentity,      // y = x, classic fine-tuning (gate pinned to all ones)
  kFixedFeature,  // y = x with the backbone frozen throughout training
};

inline std::string gate_variant_name(GateVariant v) {
  switch (v) {
    case GateVariant::kGated: return "gated";
    case GateVariant::kResidual: return "residual";
    case GateVariant::kIdentity: return "identity";
    case GateVariant::kFixedFeature: return "fixed_feature";
  }
  return "?";
}

inline GateVariant gate_variant_from_name(const std::string& name) {
  if (name == "gated") return GateVariant::kGated;
  if (name == "residual") return GateVariant::kResidual;
  if (name == "identity") return GateVariant::kIdentity;
  if (name == "fixed_feature") return GateVariant::kFixedFeature;
  throw ConfigError("unknown gate variant '" + name + "'");
}

/**
 * Channel gating block over pooled features x [B x C]:
 *
 *   gate = drop_p2(sigmoid(W2 * drop_p1(relu(W1 * x))))
 *   y    = gate * x        (elementwise)
 *
 * W1 maps C -> ceil(C/r) and W2 maps back, with reduction ratio r. Both
 * dropouts are inverted and become the identity in eval mode, so eval gates
 * lie in [0,1]; train-mode gates can exceed 1 by the 1/(1-p2) rescale.
 *
 * The residual variant returns y = F(x) + x where F is the same chain
 * (optionally without the sigmoid, see Options::residual_sigmoid). The
 * identity and fixed-feature variants bypass the chain entirely: y is x
 * bit-exactly and the reported gate is all ones.
 */
class TransferModule {
public:
  struct Options {
    std::size_t channels = 0;
    std::size_t reduction = 16;
    double p1 = 0.5;  // dropout rate after fc1 + relu
    double p2 = 0.7;  // dropout rate after fc2 + sigmoid
    GateVariant variant = GateVariant::kGated;
    bool with_bias = true;
    bool residual_sigmoid = true;
  };

  struct Output {
    Tensor y;
    Tensor gate;
  };

  TransferModule(const Options& opt, Rng rng)
      : opt_(opt),
        fc1_(opt.channels, hidden_width(opt.channels, opt.reduction), rng.split("fc1"),
             opt.with_bias),
        fc2_(hidden_width(opt.channels, opt.reduction), opt.channels, rng.split("fc2"),
             opt.with_bias),
        drop1_(opt.p1, rng.split("drop1")),
        drop2_(opt.p2, rng.split("drop2")) {
    if (opt.channels == 0) throw ValueError("transfer module: channels must be positive");
    if (opt.reduction == 0) throw ValueError("transfer module: reduction must be positive");
  }

  /// Bottleneck width: ceil(C/r), never below one unit.
  static std::size_t hidden_width(std::size_t channels, std::size_t reduction) {
    return std::max<std::size_t>(1, (channels + reduction - 1) / reduction);
  }

  /// Closed-form trainable parameter count.
  static std::size_t param_count(std::size_t channels, std::size_t reduction, bool with_bias) {
    const std::size_t hidden = hidden_width(channels, reduction);
    std::size_t count = 2 * channels * hidden;
    if (with_bias) count += hidden + channels;
    return count;
  }

  Output forward(const Tensor& x, Mode mode) {
    detail::require_rank(x, 2, "transfer");
    if (x.dim(1) != opt_.channels) {
      throw ShapeError("transfer: expected " + std::to_string(opt_.channels) +
                       " channels, got " + shape_str(x.shape()));
    }
    has_cache_ = true;
    if (bypass()) {
      return {x, Tensor::ones(x.shape())};
    }
    input_ = x;
    Tensor a1 = fc1_.forward(x, mode);
    Tensor r1 = relu_.forward(a1, mode);
    Tensor d1 = drop1_.forward(r1, mode);
    Tensor a2 = fc2_.forward(d1, mode);
    if (use_sigmoid()) {
      sig_ = sigmoid(a2);
    } else {
      sig_ = a2;
    }
    gate_ = drop2_.forward(sig_, mode);
    if (opt_.variant == GateVariant::kResidual) {
      return {add(gate_, x), gate_};
    }
    return {mul(gate_, x), gate_};
  }

  /// dL/dx for the cached forward; parameter gradients accumulate into the
  /// fc1/fc2 buffers. With dL/dy = g this computes
  /// gate*g + J_gate(x)^T (x*g) for the gated form and g + J_F(x)^T g for
  /// the residual form.
  Tensor backward(const Tensor& dy) {
    if (!has_cache_) throw StateError("transfer: backward called before forward");
    if (bypass()) return dy;
    Tensor dgate = opt_.variant == GateVariant::kResidual ? dy : mul(dy, input_);
    Tensor dsig = drop2_.backward(dgate);
    Tensor da2 = dsig;
    if (use_sigmoid()) {
      // sigmoid'(a) = s(1-s)
      for (std::size_t i = 0; i < da2.size(); ++i) da2[i] *= sig_[i] * (1.0 - sig_[i]);
    }
    Tensor dd1 = fc2_.backward(da2);
    Tensor dr1 = drop1_.backward(dd1);
    Tensor da1 = relu_.backward(dr1);
    Tensor dx_chain = fc1_.backward(da1);
    Tensor dx_direct = opt_.variant == GateVariant::kResidual ? dy : mul(dy, gate_);
    return add(dx_direct, dx_chain);
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (ParamRef p : fc1_.params()) out.push_back({"fc1." + p.name, p.value, p.grad});
    for (ParamRef p : fc2_.params()) out.push_back({"fc2." + p.name, p.value, p.grad});
    return out;
  }

  void zero_grad() {
    fc1_.zero_grad();
    fc2_.zero_grad();
  }

  void set_dropout_eval_override(bool on) {
    drop1_.set_eval_override(on);
    drop2_.set_eval_override(on);
  }

  void set_frozen_masks(bool on) {
    drop1_.set_frozen_mask(on);
    drop2_.set_frozen_mask(on);
  }

  const Options& options() const { return opt_; }
  GateVariant variant() const { return opt_.variant; }
  LinearLayer& fc1() { return fc1_; }
  LinearLayer& fc2() { return fc2_; }

private:
  bool bypass() const {
    return opt_.variant == GateVariant::kIdentity || opt_.variant == GateVariant::kFixedFeature;
  }
  bool use_sigmoid() const {
    return opt_.variant != GateVariant::kResidual || opt_.residual_sigmoid;
  }

  Options opt_;
  LinearLayer fc1_, fc2_;
  ReluLayer relu_;
  DropoutLayer drop1_, drop2_;
  Tensor input_, sig_, gate_;
  bool has_cache_ = false;
};

}  // namespace gtn
