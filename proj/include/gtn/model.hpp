#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gtn/error.hpp"
#include "gtn/layers.hpp"
#include "gtn/rng.hpp"
#include "gtn/tensor.hpp"
#include "gtn/transfer.hpp"

namespace gtn {

enum class BackboneKind { kMlp, kTinyCnn };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kMlp;
  // MLP: a stage per hidden width (linear + relu)
  std::size_t input_dim = 64;
  std::vector<std::size_t> widths = {256, 128};
  // TinyCNN: a stage per channel count (conv3x3/pad1 + relu + maxpool2)
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::vector<std::size_t> channels = {16, 32, 64};
  // Stage whose output feeds the auxiliary branch; must precede the last
  // stage. -1 selects the per-kind default (MLP: 0, TinyCNN: 1).
  int aux_tap = -1;
};

/**
 * Feature extractor: ordered stages ending in a pooled [B x C] feature
 * vector, with one intermediate stage output tapped for the auxiliary
 * branch. backward() merges the auxiliary gradient back in at the tap.
 */
class Backbone {
public:
  virtual ~Backbone() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& dfeatures, const Tensor* daux_tap) = 0;
  virtual const Tensor& aux_activation() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::size_t aux_channels() const = 0;
  virtual bool aux_needs_pool() const = 0;
  virtual std::size_t num_stages() const = 0;
  virtual std::size_t aux_tap() const = 0;
  virtual std::vector<ParamRef> params() = 0;
  virtual std::vector<BufferRef> buffers() = 0;
  virtual void zero_grad() = 0;
};

namespace detail {

inline std::size_t resolve_aux_tap(int requested, std::size_t num_stages, std::size_t fallback,
                                   const char* what) {
  const std::size_t tap = requested < 0 ? fallback : static_cast<std::size_t>(requested);
  if (num_stages < 2 || tap + 1 >= num_stages) {
    throw ConfigError(std::string(what) + ": aux tap " + std::to_string(tap) +
                      " must precede the last of " + std::to_string(num_stages) + " stages");
  }
  return tap;
}

}  // namespace detail

class MlpBackbone : public Backbone {
public:
  MlpBackbone(const BackboneConfig& cfg, Rng rng) : input_dim_(cfg.input_dim) {
    if (cfg.widths.empty()) throw ConfigError("mlp backbone: needs at least one hidden width");
    aux_tap_ = detail::resolve_aux_tap(cfg.aux_tap, cfg.widths.size(), 0, "mlp backbone");
    std::size_t in = cfg.input_dim;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      auto stage = std::make_unique<Sequential>();
      stage->emplace<LinearLayer>("linear", in, cfg.widths[i], rng.split("stage" + std::to_string(i)));
      stage->emplace<ReluLayer>("relu");
      stages_.push_back(std::move(stage));
      in = cfg.widths[i];
    }
    feature_dim_ = cfg.widths.back();
    aux_channels_ = cfg.widths[aux_tap_];
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    stage_out_.clear();
    Tensor h = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      h = detail::with_layer_context("stage" + std::to_string(i),
                                     [&] { return stages_[i]->forward(h, mode); });
      stage_out_.push_back(h);
    }
    return h;
  }

  Tensor backward(const Tensor& dfeatures, const Tensor* daux_tap) override {
    if (stage_out_.empty()) throw StateError("mlp backbone: backward called before forward");
    Tensor g = dfeatures;
    for (std::size_t i = stages_.size(); i-- > 0;) {
      if (i == aux_tap_ && daux_tap != nullptr) g = add(g, *daux_tap);
      g = stages_[i]->backward(g);
    }
    return g;
  }

  const Tensor& aux_activation() const override { return stage_out_.at(aux_tap_); }
  std::size_t feature_dim() const override { return feature_dim_; }
  std::size_t aux_channels() const override { return aux_channels_; }
  bool aux_needs_pool() const override { return false; }
  std::size_t num_stages() const override { return stages_.size(); }
  std::size_t aux_tap() const override { return aux_tap_; }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      for (ParamRef p : stages_[i]->params()) {
        out.push_back({"stage" + std::to_string(i) + "." + p.name, p.value, p.grad});
      }
    }
    return out;
  }

  std::vector<BufferRef> buffers() override { return {}; }

  void zero_grad() override {
    for (auto& s : stages_) s->zero_grad();
  }

private:
  std::size_t input_dim_, feature_dim_ = 0, aux_channels_ = 0, aux_tap_ = 0;
  std::vector<std::unique_ptr<Sequential>> stages_;
  std::vector<Tensor> stage_out_;
};

class TinyCnnBackbone : public Backbone {
public:
  TinyCnnBackbone(const BackboneConfig& cfg, Rng rng) {
    if (cfg.channels.empty()) throw ConfigError("cnn backbone: needs at least one stage");
    aux_tap_ = detail::resolve_aux_tap(cfg.aux_tap, cfg.channels.size(), 1, "cnn backbone");
    std::size_t in = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      auto stage = std::make_unique<Sequential>();
      stage->emplace<Conv2dLayer>("conv", in, cfg.channels[i], 3,
                                  rng.split("stage" + std::to_string(i)), 1, 1);
      stage->emplace<ReluLayer>("relu");
      stage->emplace<MaxPool2dLayer>("pool", 2, 2);
      stages_.push_back(std::move(stage));
      in = cfg.channels[i];
    }
    feature_dim_ = cfg.channels.back();
    aux_channels_ = cfg.channels[aux_tap_];
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    stage_out_.clear();
    Tensor h = x;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      h = detail::with_layer_context("stage" + std::to_string(i),
                                     [&] { return stages_[i]->forward(h, mode); });
      stage_out_.push_back(h);
    }
    return pool_.forward(h, mode);
  }

  Tensor backward(const Tensor& dfeatures, const Tensor* daux_tap) override {
    if (stage_out_.empty()) throw StateError("cnn backbone: backward called before forward");
    Tensor g = pool_.backward(dfeatures);
    for (std::size_t i = stages_.size(); i-- > 0;) {
      if (i == aux_tap_ && daux_tap != nullptr) g = add(g, *daux_tap);
      g = stages_[i]->backward(g);
    }
    return g;
  }

  const Tensor& aux_activation() const override { return stage_out_.at(aux_tap_); }
  std::size_t feature_dim() const override { return feature_dim_; }
  std::size_t aux_channels() const override { return aux_channels_; }
  bool aux_needs_pool() const override { return true; }
  std::size_t num_stages() const override { return stages_.size(); }
  std::size_t aux_tap() const override { return aux_tap_; }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      for (ParamRef p : stages_[i]->params()) {
        out.push_back({"stage" + std::to_string(i) + "." + p.name, p.value, p.grad});
      }
    }
    return out;
  }

  std::vector<BufferRef> buffers() override { return {}; }

  void zero_grad() override {
    for (auto& s : stages_) s->zero_grad();
  }

private:
  std::size_t feature_dim_ = 0, aux_channels_ = 0, aux_tap_ = 0;
  std::vector<std::unique_ptr<Sequential>> stages_;
  GlobalAvgPoolLayer pool_;
  std::vector<Tensor> stage_out_;
};

inline std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, Rng rng) {
  if (cfg.kind == BackboneKind::kMlp) return std::make_unique<MlpBackbone>(cfg, rng);
  return std::make_unique<TinyCnnBackbone>(cfg, rng);
}

/// Auxiliary classifier: (global-avg-pool for spatial taps) + one linear.
class AuxHead {
public:
  AuxHead(std::size_t in_channels, std::size_t num_classes, bool pool, Rng rng)
      : pool_(pool), fc_(in_channels, num_classes, rng.split("fc")) {}

  Tensor forward(const Tensor& tapped, Mode mode) {
    Tensor h = pool_ ? gap_.forward(tapped, mode) : tapped;
    return fc_.forward(h, mode);
  }

  Tensor backward(const Tensor& dlogits) {
    Tensor dh = fc_.backward(dlogits);
    return pool_ ? gap_.backward(dh) : dh;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (ParamRef p : fc_.params()) out.push_back({"fc." + p.name, p.value, p.grad});
    return out;
  }

  void zero_grad() { fc_.zero_grad(); }

private:
  bool pool_;
  GlobalAvgPoolLayer gap_;
  LinearLayer fc_;
};

/// Model flavors exposed on the command line.
enum class ModelVariant { kGtn, kClassicFt, kFixedFeature, kResidual, kDaCnn, kPlain };

inline std::string model_variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::kGtn: return "gtn";
    case ModelVariant::kClassicFt: return "classic-ft";
    case ModelVariant::kFixedFeature: return "fixed-feature";
    case ModelVariant::kResidual: return "residual";
    case ModelVariant::kDaCnn: return "da-cnn";
    case ModelVariant::kPlain: return "plain";
  }
  return "?";
}

inline ModelVariant model_variant_from_name(const std::string& name) {
  if (name == "gtn") return ModelVariant::kGtn;
  if (name == "classic-ft") return ModelVariant::kClassicFt;
  if (name == "fixed-feature") return ModelVariant::kFixedFeature;
  if (name == "residual") return ModelVariant::kResidual;
  if (name == "da-cnn") return ModelVariant::kDaCnn;
  if (name == "plain") return ModelVariant::kPlain;
  throw ConfigError("unknown model variant '" + name + "'");
}

struct GtnModelConfig {
  BackboneConfig backbone;
  std::size_t num_classes = 4;
  ModelVariant variant = ModelVariant::kGtn;
  std::size_t reduction = 16;
  double p1 = 0.5;
  double p2 = 0.7;
  double lambda = 0.2;
  bool aux_enabled = true;
  bool gate_bias = true;
  bool residual_sigmoid = true;
  std::uint64_t seed = 0;
};

struct LossParts {
  double total = 0.0;
  double main = 0.0;
  double aux = 0.0;
};

/// total = main + lambda * aux; all three returned for logging.
inline LossParts combined_loss(const Tensor& main_logits, const Tensor* aux_logits,
                               const std::vector<int>& labels, double lambda) {
  if (lambda < 0.0) throw ValueError("combined_loss: lambda must be >= 0");
  LossParts parts;
  parts.main = softmax_xent_loss(main_logits, labels);
  if (aux_logits != nullptr && !aux_logits->empty()) {
    parts.aux = softmax_xent_loss(*aux_logits, labels);
  }
  parts.total = parts.main + lambda * parts.aux;
  return parts;
}

/**
 * The full network: backbone plus (per variant) transfer module or
 * depth-augmenting adapter, a main classifier, and an optional auxiliary
 * classifier fed from the tapped backbone stage. The auxiliary branch is
 * used during training only; predictions depend on the main head alone.
 */
class GtnModel {
public:
  struct ForwardOut {
    Tensor main_logits;
    Tensor aux_logits;  // empty unless requested in train mode with aux on
    Tensor gate;        // all ones when the variant has no gating
    Tensor features;    // pooled backbone output (pre-gate)
    Tensor gated;       // classifier input (post transfer/adapter)
    bool has_aux = false;
  };

  explicit GtnModel(const GtnModelConfig& cfg) : cfg_(cfg) {
    Rng root(cfg.seed);
    backbone_ = make_backbone(cfg.backbone, root.split("backbone"));
    const std::size_t c = backbone_->feature_dim();
    switch (cfg.variant) {
      case ModelVariant::kGtn:
        transfer_.emplace(make_transfer_options(c, GateVariant::kGated), root.split("transfer"));
        break;
      case ModelVariant::kResidual:
        transfer_.emplace(make_transfer_options(c, GateVariant::kResidual),
                          root.split("transfer"));
        break;
      case ModelVariant::kClassicFt:
        transfer_.emplace(make_transfer_options(c, GateVariant::kIdentity),
                          root.split("transfer"));
        break;
      case ModelVariant::kFixedFeature:
        transfer_.emplace(make_transfer_options(c, GateVariant::kFixedFeature),
                          root.split("transfer"));
        break;
      case ModelVariant::kDaCnn: {
        adapter_ = std::make_unique<Sequential>();
        adapter_->emplace<LinearLayer>("fc", c, c, root.split("adapter"));
        adapter_->emplace<BatchNorm1dLayer>("bn", c);
        adapter_->emplace<ReluLayer>("relu");
        break;
      }
      case ModelVariant::kPlain:
        break;
    }
    main_head_ = std::make_unique<LinearLayer>(c, cfg.num_classes, root.split("main_head"));
    if (cfg.aux_enabled) {
      aux_head_ = std::make_unique<AuxHead>(backbone_->aux_channels(), cfg.num_classes,
                                            backbone_->aux_needs_pool(), root.split("aux_head"));
    }
  }

  ForwardOut forward(const Tensor& x, Mode mode, bool want_aux = true) {
    ForwardOut out;
    out.features = detail::with_layer_context("backbone",
                                              [&] { return backbone_->forward(x, mode); });
    Tensor z = out.features;
    if (adapter_) {
      z = detail::with_layer_context("adapter", [&] { return adapter_->forward(z, mode); });
      out.gate = Tensor::ones(z.shape());
    } else if (transfer_) {
      auto gated = detail::with_layer_context(
          "transfer", [&] { return transfer_->forward(z, mode); });
      z = gated.y;
      out.gate = gated.gate;
    } else {
      out.gate = Tensor::ones(z.shape());
    }
    out.gated = z;
    out.main_logits = detail::with_layer_context(
        "main_head", [&] { return main_head_->forward(z, mode); });
    if (aux_head_ && want_aux && mode == Mode::kTrain) {
      out.aux_logits = detail::with_layer_context("aux_head", [&] {
        return aux_head_->forward(backbone_->aux_activation(), mode);
      });
      out.has_aux = true;
    }
    last_ = out;
    has_cache_ = true;
    return out;
  }

  LossParts loss(const ForwardOut& out, const std::vector<int>& labels) const {
    return combined_loss(out.main_logits, out.has_aux ? &out.aux_logits : nullptr, labels,
                         cfg_.lambda);
  }

  /// Forward + combined loss without touching gradients.
  double loss_value(const Tensor& x, const std::vector<int>& labels, Mode mode) {
    ForwardOut out = forward(x, mode);
    return loss(out, labels).total;
  }

  /// Backpropagate the combined loss of the cached forward. Parameter
  /// gradients accumulate; returns dL/dinput. When lambda is zero the
  /// auxiliary branch is skipped entirely, so gradients are bit-identical
  /// to a model with no auxiliary head.
  Tensor backward(const std::vector<int>& labels) {
    if (!has_cache_) throw StateError("model: backward called before forward");
    Tensor dmain = softmax_xent_grad(last_.main_logits, labels);
    Tensor d = main_head_->backward(dmain);
    if (transfer_) {
      d = detail::with_layer_context("transfer", [&] { return transfer_->backward(d); });
    } else if (adapter_) {
      d = detail::with_layer_context("adapter", [&] { return adapter_->backward(d); });
    }
    Tensor daux;
    bool have_daux = false;
    if (last_.has_aux && cfg_.lambda != 0.0) {
      Tensor daux_logits = scale(softmax_xent_grad(last_.aux_logits, labels), cfg_.lambda);
      daux = aux_head_->backward(daux_logits);
      have_daux = true;
    }
    return backbone_->backward(d, have_daux ? &daux : nullptr);
  }

  std::vector<std::pair<std::string, std::vector<ParamRef>>> param_groups() {
    std::vector<std::pair<std::string, std::vector<ParamRef>>> groups;
    groups.emplace_back("backbone", backbone_->params());
    if (adapter_) groups.emplace_back("adapter", adapter_->params());
    if (transfer_) groups.emplace_back("transfer", transfer_->params());
    groups.emplace_back("main_head", main_head_->params());
    if (aux_head_) groups.emplace_back("aux_head", aux_head_->params());
    return groups;
  }

  /// All parameters with "group." name prefixes.
  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    for (auto& [group, refs] : param_groups()) {
      for (ParamRef p : refs) out.push_back({group + "." + p.name, p.value, p.grad});
    }
    return out;
  }

  std::vector<BufferRef> all_buffers() {
    std::vector<BufferRef> out;
    for (BufferRef b : backbone_->buffers()) out.push_back({"backbone." + b.name, b.value});
    if (adapter_) {
      for (BufferRef b : adapter_->buffers()) out.push_back({"adapter." + b.name, b.value});
    }
    return out;
  }

  void zero_grad() {
    backbone_->zero_grad();
    if (adapter_) adapter_->zero_grad();
    if (transfer_) transfer_->zero_grad();
    main_head_->zero_grad();
    if (aux_head_) aux_head_->zero_grad();
  }

  /// Parameter groups this variant never trains, regardless of protocol.
  std::set<std::string> always_frozen() const {
    if (cfg_.variant == ModelVariant::kFixedFeature) return {"backbone"};
    return {};
  }

  /// Swap in freshly initialized classifier heads for a new label space.
  void replace_heads(std::size_t num_classes, Rng rng) {
    cfg_.num_classes = num_classes;
    main_head_ = std::make_unique<LinearLayer>(backbone_->feature_dim(), num_classes,
                                               rng.split("main_head"));
    if (cfg_.aux_enabled) {
      aux_head_ = std::make_unique<AuxHead>(backbone_->aux_channels(), num_classes,
                                            backbone_->aux_needs_pool(), rng.split("aux_head"));
    }
    has_cache_ = false;
  }

  /// Copy one parameter group's tensors (and matching buffers) by name.
  void copy_group_from(GtnModel& other, const std::string& group) {
    auto find = [&](std::vector<std::pair<std::string, std::vector<ParamRef>>> groups)
        -> std::vector<ParamRef> {
      for (auto& [name, refs] : groups) {
        if (name == group) return refs;
      }
      throw ValueError("model has no parameter group '" + group + "'");
    };
    std::vector<ParamRef> dst = find(param_groups());
    std::vector<ParamRef> src = find(other.param_groups());
    if (dst.size() != src.size()) {
      throw ShapeError("incompatible checkpoint: group '" + group + "' has " +
                       std::to_string(src.size()) + " tensors, expected " +
                       std::to_string(dst.size()));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].name != src[i].name || !dst[i].value->same_shape(*src[i].value)) {
        throw ShapeError("incompatible checkpoint: tensor '" + group + "." + src[i].name +
                         "' does not match '" + group + "." + dst[i].name + "' " +
                         shape_str(dst[i].value->shape()));
      }
      *dst[i].value = *src[i].value;
    }
    const std::string prefix = group + ".";
    for (BufferRef b : other.all_buffers()) {
      if (b.name.rfind(prefix, 0) != 0) continue;
      for (BufferRef mine : all_buffers()) {
        if (mine.name == b.name) *mine.value = *b.value;
      }
    }
  }

  void set_dropout_eval_override(bool on) {
    if (transfer_) transfer_->set_dropout_eval_override(on);
  }

  const GtnModelConfig& config() const { return cfg_; }
  Backbone& backbone() { return *backbone_; }
  TransferModule* transfer() { return transfer_ ? &*transfer_ : nullptr; }
  LinearLayer& main_head() { return *main_head_; }
  Sequential* adapter() { return adapter_.get(); }
  const ForwardOut& last_forward() const { return last_; }

private:
  TransferModule::Options make_transfer_options(std::size_t channels, GateVariant variant) const {
    TransferModule::Options opt;
    opt.channels = channels;
    opt.reduction = cfg_.reduction;
    opt.p1 = cfg_.p1;
    opt.p2 = cfg_.p2;
    opt.variant = variant;
    opt.with_bias = cfg_.gate_bias;
    opt.residual_sigmoid = cfg_.residual_sigmoid;
    return opt;
  }

  GtnModelConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
  std::optional<TransferModule> transfer_;
  std::unique_ptr<Sequential> adapter_;
  std::unique_ptr<LinearLayer> main_head_;
  std::unique_ptr<AuxHead> aux_head_;
  ForwardOut last_;
  bool has_cache_ = false;
};

/// Depth-augmented baseline: features -> FC(C->C) -> BatchNorm -> ReLU ->
/// classifier, no gating.
inline GtnModel build_da_baseline(const BackboneConfig& backbone, std::size_t num_classes,
                                  std::uint64_t seed, bool aux_enabled = true,
                                  double lambda = 0.2) {
  GtnModelConfig cfg;
  cfg.backbone = backbone;
  cfg.num_classes = num_classes;
  cfg.variant = ModelVariant::kDaCnn;
  cfg.aux_enabled = aux_enabled;
  cfg.lambda = lambda;
  cfg.seed = seed;
  return GtnModel(cfg);
}

}  // namespace gtn
