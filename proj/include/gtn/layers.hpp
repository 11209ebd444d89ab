#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gtn/error.hpp"
#include "gtn/rng.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

enum class Mode { kTrain, kEval };

/// Named view of one trainable tensor and its gradient buffer.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

/// Named view of a persistent but untrained tensor (e.g. running stats).
struct BufferRef {
  std::string name;
  Tensor* value;
};

/**
 * Base class for all layers.
 *
 * forward() caches whatever backward() needs; backward() returns dL/dx for
 * the most recent forward and accumulates parameter gradients into the
 * layers' grad buffers (callers zero them between optimizer steps).
 * An instance runs one forward/backward pair at a time; distinct instances
 * are independent.
 */
class Layer {
public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::vector<BufferRef> buffers() { return {}; }
  virtual std::string type() const = 0;

  void zero_grad() {
    for (ParamRef p : params()) std::fill(p.grad->values().begin(), p.grad->values().end(), 0.0);
  }

protected:
  void require_cache(bool have, const char* what) const {
    if (!have) throw StateError(std::string(what) + ": backward called before forward");
  }
};

/// y = x W^T + b with W [out x in], x [B x in].
class LinearLayer : public Layer {
public:
  LinearLayer(std::size_t in_dim, std::size_t out_dim, Rng rng, bool with_bias = true)
      : in_dim_(in_dim), out_dim_(out_dim), with_bias_(with_bias) {
    // Kaiming-uniform fan-in scaling; biases start at zero.
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim));
    weight_ = rand_uniform(rng, {out_dim, in_dim}, -bound, bound);
    grad_weight_ = Tensor({out_dim, in_dim});
    if (with_bias_) {
      bias_ = Tensor({out_dim});
      grad_bias_ = Tensor({out_dim});
    }
  }

  Tensor forward(const Tensor& x, Mode) override {
    detail::require_rank(x, 2, "linear");
    if (x.dim(1) != in_dim_) {
      throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                       shape_str(weight_.shape()));
    }
    input_ = x;
    has_cache_ = true;
    Tensor y = matmul(x, transpose(weight_));
    if (with_bias_) {
      for (std::size_t b = 0; b < y.dim(0); ++b)
        for (std::size_t o = 0; o < out_dim_; ++o) y.at(b, o) += bias_[o];
      detail::ensure_finite(y, "linear");
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "linear");
    detail::require_rank(dy, 2, "linear backward");
    grad_weight_ = add(grad_weight_, matmul(transpose(dy), input_));
    if (with_bias_) grad_bias_ = add(grad_bias_, col_sum(dy));
    return matmul(dy, weight_);
  }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out{{"weight", &weight_, &grad_weight_}};
    if (with_bias_) out.push_back({"bias", &bias_, &grad_bias_});
    return out;
  }

  std::string type() const override { return "linear"; }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  bool with_bias() const { return with_bias_; }
  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  Tensor& bias() { return bias_; }

private:
  std::size_t in_dim_, out_dim_;
  bool with_bias_;
  Tensor weight_, bias_, grad_weight_, grad_bias_;
  Tensor input_;
  bool has_cache_ = false;
};

class ReluLayer : public Layer {
public:
  Tensor forward(const Tensor& x, Mode) override {
    mask_ = x;
    for (double& v : mask_.values()) v = v > 0.0 ? 1.0 : 0.0;
    has_cache_ = true;
    return relu(x);
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "relu");
    return mul(dy, mask_);
  }

  std::string type() const override { return "relu"; }

private:
  Tensor mask_;
  bool has_cache_ = false;
};

/**
 * Inverted dropout: in train mode each entry is kept with probability 1-p
 * and scaled by 1/(1-p); eval mode returns the input bit-exactly. The layer
 * owns its random stream, so a model seed fixes every mask.
 */
class DropoutLayer : public Layer {
public:
  DropoutLayer(double rate, Rng stream) : rate_(rate), rng_(stream) {
    if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout: rate must be in [0, 1)");
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    effective_train_ = (mode == Mode::kTrain) && !eval_override_;
    has_cache_ = true;
    if (!effective_train_) return x;
    if (!(frozen_mask_ && mask_.same_shape(x))) sample_mask(x.shape());
    return mul(x, mask_);
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "dropout");
    if (!effective_train_) return dy;
    return mul(dy, mask_);
  }

  std::string type() const override { return "dropout"; }

  double rate() const { return rate_; }
  const Tensor& mask() const { return mask_; }
  /// Keep reusing the last sampled mask (finite-difference checks).
  void set_frozen_mask(bool on) { frozen_mask_ = on; }
  /// Force eval behavior regardless of the mode argument.
  void set_eval_override(bool on) { eval_override_ = on; }

private:
  void sample_mask(const Shape& shape) {
    const double keep = 1.0 - rate_;
    const double scale = 1.0 / keep;
    mask_ = Tensor(shape);
    for (double& v : mask_.values()) v = rng_.bernoulli(keep) ? scale : 0.0;
  }

  double rate_;
  Rng rng_;
  Tensor mask_;
  bool frozen_mask_ = false;
  bool eval_override_ = false;
  bool effective_train_ = false;
  bool has_cache_ = false;
};

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                                const char* what) {
  if (in + 2 * pad < k) throw ShapeError(std::string(what) + ": kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

// Patch-flattening: one column per output position, rows ordered
// (channel, kernel row, kernel col).
inline Tensor im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                     std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
                     std::size_t ow) {
  Tensor col({c * kh * kw, oh * ow});
  double* pc = col.data();
  const std::size_t ncols = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < kh; ++u) {
      for (std::size_t v = 0; v < kw; ++v) {
        const std::size_t row = (ch * kh + u) * kw + v;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + u) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + v) -
                                      static_cast<std::ptrdiff_t>(pad);
            double val = 0.0;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              val = x[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
            pc[row * ncols + oy * ow + ox] = val;
          }
        }
      }
    }
  }
  return col;
}

inline void col2im_accumulate(const Tensor& col, double* x, std::size_t c, std::size_t h,
                              std::size_t w, std::size_t kh, std::size_t kw, std::size_t stride,
                              std::size_t pad, std::size_t oh, std::size_t ow) {
  const double* pc = col.data();
  const std::size_t ncols = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t u = 0; u < kh; ++u) {
      for (std::size_t v = 0; v < kw; ++v) {
        const std::size_t row = (ch * kh + u) * kw + v;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + u) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + v) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            x[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                pc[row * ncols + oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/**
 * 2-D convolution over [B x C x H x W] input, implemented by patch
 * flattening so the product reduces to the verified matmul. The kernel is
 * stored as a [outC x inC*kh*kw] matrix in (channel, row, col) patch order.
 */
class Conv2dLayer : public Layer {
public:
  Conv2dLayer(std::size_t in_c, std::size_t out_c, std::size_t kernel, Rng rng,
              std::size_t stride = 1, std::size_t pad = 0, bool with_bias = true)
      : in_c_(in_c), out_c_(out_c), kh_(kernel), kw_(kernel), stride_(stride), pad_(pad),
        with_bias_(with_bias) {
    const std::size_t fan_in = in_c * kh_ * kw_;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    weight_ = rand_uniform(rng, {out_c, fan_in}, -bound, bound);
    grad_weight_ = Tensor({out_c, fan_in});
    if (with_bias_) {
      bias_ = Tensor({out_c});
      grad_bias_ = Tensor({out_c});
    }
  }

  Tensor forward(const Tensor& x, Mode) override {
    detail::require_rank(x, 4, "conv2d");
    if (x.dim(1) != in_c_) {
      throw ShapeError("conv2d: expected " + std::to_string(in_c_) + " input channels, got " +
                       shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
    oh_ = detail::conv_out_dim(h, kh_, stride_, pad_, "conv2d");
    ow_ = detail::conv_out_dim(w, kw_, stride_, pad_, "conv2d");
    in_h_ = h;
    in_w_ = w;
    cols_.clear();
    cols_.reserve(batch);
    Tensor y({batch, out_c_, oh_, ow_});
    const std::size_t plane = oh_ * ow_;
    for (std::size_t b = 0; b < batch; ++b) {
      cols_.push_back(detail::im2col(x.data() + b * in_c_ * h * w, in_c_, h, w, kh_, kw_, stride_,
                                     pad_, oh_, ow_));
      Tensor yb = matmul(weight_, cols_.back());
      double* py = y.data() + b * out_c_ * plane;
      for (std::size_t oc = 0; oc < out_c_; ++oc) {
        const double beta = with_bias_ ? bias_[oc] : 0.0;
        for (std::size_t p = 0; p < plane; ++p) py[oc * plane + p] = yb[oc * plane + p] + beta;
      }
    }
    detail::ensure_finite(y, "conv2d");
    has_cache_ = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "conv2d");
    detail::require_rank(dy, 4, "conv2d backward");
    const std::size_t batch = cols_.size();
    const std::size_t plane = oh_ * ow_;
    Tensor dx({batch, in_c_, in_h_, in_w_});
    Tensor wt = transpose(weight_);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor dyb({out_c_, plane});
      std::copy_n(dy.data() + b * out_c_ * plane, out_c_ * plane, dyb.data());
      grad_weight_ = add(grad_weight_, matmul(dyb, transpose(cols_[b])));
      if (with_bias_) grad_bias_ = add(grad_bias_, row_sum(dyb));
      Tensor dcol = matmul(wt, dyb);
      detail::col2im_accumulate(dcol, dx.data() + b * in_c_ * in_h_ * in_w_, in_c_, in_h_, in_w_,
                                kh_, kw_, stride_, pad_, oh_, ow_);
    }
    return dx;
  }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out{{"weight", &weight_, &grad_weight_}};
    if (with_bias_) out.push_back({"bias", &bias_, &grad_bias_});
    return out;
  }

  std::string type() const override { return "conv2d"; }

private:
  std::size_t in_c_, out_c_, kh_, kw_, stride_, pad_;
  bool with_bias_;
  Tensor weight_, bias_, grad_weight_, grad_bias_;
  std::vector<Tensor> cols_;
  std::size_t in_h_ = 0, in_w_ = 0, oh_ = 0, ow_ = 0;
  bool has_cache_ = false;
};

/// Non-overlapping max pooling; ties resolve to the first scan position.
class MaxPool2dLayer : public Layer {
public:
  explicit MaxPool2dLayer(std::size_t kernel = 2, std::size_t stride = 2)
      : k_(kernel), stride_(stride) {}

  Tensor forward(const Tensor& x, Mode) override {
    detail::require_rank(x, 4, "maxpool2d");
    const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    oh_ = detail::conv_out_dim(h, k_, stride_, 0, "maxpool2d");
    ow_ = detail::conv_out_dim(w, k_, stride_, 0, "maxpool2d");
    in_shape_ = x.shape();
    Tensor y({batch, c, oh_, ow_});
    argmax_.assign(y.size(), 0);
    std::size_t out_i = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = x.data() + (b * c + ch) * h * w;
        const std::size_t base = (b * c + ch) * h * w;
        for (std::size_t oy = 0; oy < oh_; ++oy) {
          for (std::size_t ox = 0; ox < ow_; ++ox, ++out_i) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t u = 0; u < k_; ++u) {
              for (std::size_t v = 0; v < k_; ++v) {
                const std::size_t iy = oy * stride_ + u, ix = ox * stride_ + v;
                const double val = plane[iy * w + ix];
                if (val > best) {
                  best = val;
                  best_idx = base + iy * w + ix;
                }
              }
            }
            y[out_i] = best;
            argmax_[out_i] = best_idx;
          }
        }
      }
    }
    has_cache_ = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "maxpool2d");
    Tensor dx(in_shape_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

  std::string type() const override { return "maxpool2d"; }

private:
  std::size_t k_, stride_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
  std::size_t oh_ = 0, ow_ = 0;
  bool has_cache_ = false;
};

/// Mean over the spatial dims of [B x C x H x W] -> [B x C].
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const std::size_t batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y({batch, c});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data() + (b * c + ch) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.at(b, ch) = s / static_cast<double>(plane);
    }
  }
  detail::ensure_finite(y, "global_avg_pool");
  return y;
}

class GlobalAvgPoolLayer : public Layer {
public:
  Tensor forward(const Tensor& x, Mode) override {
    in_shape_ = x.shape();
    has_cache_ = true;
    return global_avg_pool(x);
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "global_avg_pool");
    const std::size_t plane = in_shape_[2] * in_shape_[3];
    Tensor dx(in_shape_);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t b = 0; b < in_shape_[0]; ++b)
      for (std::size_t ch = 0; ch < in_shape_[1]; ++ch) {
        const double g = dy.at(b, ch) * inv;
        double* p = dx.data() + (b * in_shape_[1] + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = g;
      }
    return dx;
  }

  std::string type() const override { return "global_avg_pool"; }

private:
  Shape in_shape_;
  bool has_cache_ = false;
};

/**
 * Batch normalization over [B x C]. Train mode normalizes with batch
 * statistics (population variance) and updates the running buffers with the
 * same batch statistics; eval mode is a deterministic affine map using the
 * running buffers only.
 */
class BatchNorm1dLayer : public Layer {
public:
  explicit BatchNorm1dLayer(std::size_t channels, double momentum = 0.1, double epsilon = 1e-5)
      : c_(channels), momentum_(momentum), eps_(epsilon) {
    gamma_ = Tensor::ones({channels});
    beta_ = Tensor({channels});
    grad_gamma_ = Tensor({channels});
    grad_beta_ = Tensor({channels});
    running_mean_ = Tensor({channels});
    running_var_ = Tensor::ones({channels});
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    detail::require_rank(x, 2, "batchnorm1d");
    if (x.dim(1) != c_) {
      throw ShapeError("batchnorm1d: expected " + std::to_string(c_) + " channels, got " +
                       shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0);
    train_mode_ = (mode == Mode::kTrain);
    Tensor y(x.shape());
    if (train_mode_) {
      if (batch < 2) throw ValueError("batchnorm1d: train mode needs batch >= 2");
      xhat_ = Tensor(x.shape());
      invstd_ = Tensor({c_});
      for (std::size_t ch = 0; ch < c_; ++ch) {
        double m = 0.0;
        for (std::size_t b = 0; b < batch; ++b) m += x.at(b, ch);
        m /= static_cast<double>(batch);
        double var = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const double d = x.at(b, ch) - m;
          var += d * d;
        }
        var /= static_cast<double>(batch);
        const double inv = 1.0 / std::sqrt(var + eps_);
        invstd_[ch] = inv;
        for (std::size_t b = 0; b < batch; ++b) {
          xhat_.at(b, ch) = (x.at(b, ch) - m) * inv;
          y.at(b, ch) = gamma_[ch] * xhat_.at(b, ch) + beta_[ch];
        }
        running_mean_[ch] = (1.0 - momentum_) * running_mean_[ch] + momentum_ * m;
        running_var_[ch] = (1.0 - momentum_) * running_var_[ch] + momentum_ * var;
      }
    } else {
      eval_scale_ = Tensor({c_});
      for (std::size_t ch = 0; ch < c_; ++ch) {
        const double inv = 1.0 / std::sqrt(running_var_[ch] + eps_);
        eval_scale_[ch] = gamma_[ch] * inv;
        for (std::size_t b = 0; b < batch; ++b) {
          y.at(b, ch) = (x.at(b, ch) - running_mean_[ch]) * eval_scale_[ch] + beta_[ch];
        }
      }
      // eval backward still accumulates gamma/beta grads via xhat
      xhat_ = Tensor(x.shape());
      for (std::size_t ch = 0; ch < c_; ++ch) {
        const double inv = 1.0 / std::sqrt(running_var_[ch] + eps_);
        for (std::size_t b = 0; b < batch; ++b)
          xhat_.at(b, ch) = (x.at(b, ch) - running_mean_[ch]) * inv;
      }
    }
    detail::ensure_finite(y, "batchnorm1d");
    has_cache_ = true;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache(has_cache_, "batchnorm1d");
    const std::size_t batch = dy.dim(0);
    Tensor dx(dy.shape());
    for (std::size_t ch = 0; ch < c_; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        sum_dy += dy.at(b, ch);
        sum_dy_xhat += dy.at(b, ch) * xhat_.at(b, ch);
      }
      grad_gamma_[ch] += sum_dy_xhat;
      grad_beta_[ch] += sum_dy;
      if (train_mode_) {
        const double n = static_cast<double>(batch);
        const double scale = gamma_[ch] * invstd_[ch] / n;
        for (std::size_t b = 0; b < batch; ++b) {
          dx.at(b, ch) =
              scale * (n * dy.at(b, ch) - sum_dy - xhat_.at(b, ch) * sum_dy_xhat);
        }
      } else {
        for (std::size_t b = 0; b < batch; ++b) dx.at(b, ch) = dy.at(b, ch) * eval_scale_[ch];
      }
    }
    return dx;
  }

  std::vector<ParamRef> params() override {
    return {{"gamma", &gamma_, &grad_gamma_}, {"beta", &beta_, &grad_beta_}};
  }

  std::vector<BufferRef> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

  std::string type() const override { return "batchnorm1d"; }

private:
  std::size_t c_;
  double momentum_, eps_;
  Tensor gamma_, beta_, grad_gamma_, grad_beta_;
  Tensor running_mean_, running_var_;
  Tensor xhat_, invstd_, eval_scale_;
  bool train_mode_ = false;
  bool has_cache_ = false;
};

/// Row-wise softmax with max-subtraction stabilization.
inline Tensor softmax_rows(const Tensor& logits) {
  detail::require_rank(logits, 2, "softmax");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    double mx = logits.at(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(b, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p.at(b, j) = std::exp(logits.at(b, j) - mx);
      denom += p.at(b, j);
    }
    for (std::size_t j = 0; j < k; ++j) p.at(b, j) /= denom;
  }
  detail::ensure_finite(p, "softmax");
  return p;
}

namespace detail {

/// Run fn, re-raising library errors with a layer/stage name prepended so
/// failures identify where in a composite they happened.
template <class Fn>
auto with_layer_context(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(name + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(name + ": " + e.what());
  } catch (const StateError& e) {
    throw StateError(name + ": " + e.what());
  } catch (const ValueError& e) {
    throw ValueError(name + ": " + e.what());
  }
}

inline void require_labels(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(logits.dim(0)));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
      throw ValueError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(logits.dim(1)) + ")");
    }
  }
}

}  // namespace detail

/// Mean softmax cross-entropy over the batch, max-subtraction stabilized.
inline double softmax_xent_loss(const Tensor& logits, const std::vector<int>& labels) {
  detail::require_labels(logits, labels);
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double mx = logits.at(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(b, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(logits.at(b, j) - mx);
    total += std::log(denom) - (logits.at(b, static_cast<std::size_t>(labels[b])) - mx);
  }
  const double loss = total / static_cast<double>(batch);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy produced a non-finite loss");
  return loss;
}

/// d(mean cross-entropy)/d(logits) = (softmax - onehot) / B.
inline Tensor softmax_xent_grad(const Tensor& logits, const std::vector<int>& labels) {
  detail::require_labels(logits, labels);
  Tensor g = softmax_rows(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.dim(0));
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    g.at(b, static_cast<std::size_t>(labels[b])) -= 1.0;
    for (std::size_t j = 0; j < logits.dim(1); ++j) g.at(b, j) *= inv_b;
  }
  return g;
}

/**
 * Ordered, named chain of layers. Errors thrown inside a child are
 * re-raised with the child's name prepended so failures identify the layer.
 */
class Sequential : public Layer {
public:
  template <class L, class... Args>
  L& emplace(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    items_.emplace_back(std::move(name), std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode) override {
    Tensor h = x;
    for (auto& [name, layer] : items_) {
      h = detail::with_layer_context(name, [&] { return layer->forward(h, mode); });
    }
    return h;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor g = dy;
    for (auto it = items_.rbegin(); it != items_.rend(); ++it) {
      g = detail::with_layer_context(it->first, [&] { return it->second->backward(g); });
    }
    return g;
  }

  std::vector<ParamRef> params() override {
    std::vector<ParamRef> out;
    for (auto& [name, layer] : items_) {
      for (ParamRef p : layer->params()) out.push_back({name + "." + p.name, p.value, p.grad});
    }
    return out;
  }

  std::vector<BufferRef> buffers() override {
    std::vector<BufferRef> out;
    for (auto& [name, layer] : items_) {
      for (BufferRef b : layer->buffers()) out.push_back({name + "." + b.name, b.value});
    }
    return out;
  }

  std::string type() const override { return "sequential"; }

  std::size_t size() const { return items_.size(); }
  Layer& at(std::size_t i) { return *items_.at(i).second; }
  const std::string& name_at(std::size_t i) const { return items_.at(i).first; }

  /// Apply a function to every layer in the chain, recursively.
  template <class Fn>
  void for_each(Fn&& fn) {
    for (auto& [name, layer] : items_) {
      if (auto* seq = dynamic_cast<Sequential*>(layer.get())) {
        seq->for_each(fn);
      } else {
        fn(*layer);
      }
    }
  }

private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> items_;
};

}  // namespace gtn
