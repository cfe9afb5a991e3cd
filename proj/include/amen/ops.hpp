#pragma once

// Layer primitives with explicit forward and backward passes.
//
// Backward functions take the upstream gradient (same shape as the forward
// output) and return gradients for every differentiable argument. They never
// touch the tensors' gradient slots, so the same parameters can be
// differentiated concurrently against different samples.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amen/error.hpp"
#include "amen/tensor.hpp"

namespace amen {

enum class LayerKind { conv, maxpool, relu, linear, gap };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::linear: return "linear";
    case LayerKind::gap: return "gap";
  }
  return "?";
}

// One stage of a network. Fields that do not apply to a kind are ignored:
// conv uses kernel/stride/padding/in/out channels, maxpool uses kernel (the
// window) and stride, linear uses in/out as feature counts.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                        std::size_t stride = 1, std::size_t padding = 0) {
    return {LayerKind::conv, k, stride, padding, in_ch, out_ch};
  }
  static LayerSpec maxpool(std::size_t window, std::size_t stride) {
    return {LayerKind::maxpool, window, stride, 0, 0, 0};
  }
  static LayerSpec relu() { return {LayerKind::relu, 1, 1, 0, 0, 0}; }
  static LayerSpec linear(std::size_t in_f, std::size_t out_f) {
    return {LayerKind::linear, 1, 1, 0, in_f, out_f};
  }
  static LayerSpec gap() { return {LayerKind::gap, 1, 1, 0, 0, 0}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Throws SpecError when extents are not strictly positive or padding >= kernel.
inline void validate_layer(const LayerSpec& l) {
  auto fail = [&](const std::string& why) {
    throw SpecError(std::string(layer_kind_name(l.kind)) + " layer: " + why);
  };
  switch (l.kind) {
    case LayerKind::conv:
      if (l.in == 0 || l.out == 0) fail("channel counts must be positive");
      [[fallthrough]];
    case LayerKind::maxpool:
      if (l.kernel == 0 || l.stride == 0) fail("kernel and stride must be positive");
      if (l.padding >= l.kernel) fail("padding must be smaller than kernel");
      break;
    case LayerKind::linear:
      if (l.in == 0 || l.out == 0) fail("feature counts must be positive");
      break;
    case LayerKind::relu:
    case LayerKind::gap:
      break;
  }
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, input [C_in,H,W], kernels [C_out,C_in,k,k].

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

namespace detail {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, oh, ow;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels,
                           const Tensor<T>& bias, std::size_t stride, std::size_t padding) {
  if (input.rank() != 3 || kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw ShapeError("conv2d expects input [C,H,W] and kernels [Co,Ci,k,k], got input " +
                     shape_str(input.shape()) + " and kernels " + shape_str(kernels.shape()));
  }
  if (kernels.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs kernels " + shape_str(kernels.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0)) {
    throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " does not match kernels " +
                     shape_str(kernels.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
  const std::size_t k = kernels.dim(2);
  if (input.dim(1) + 2 * padding < k || input.dim(2) + 2 * padding < k) {
    throw ShapeError("conv2d kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                     shape_str(input.shape()));
  }
  return {input.dim(0),
          input.dim(1),
          input.dim(2),
          kernels.dim(0),
          k,
          stride,
          padding,
          conv_out_extent(input.dim(1), k, stride, padding),
          conv_out_extent(input.dim(2), k, stride, padding)};
}

// Range [lo, hi) of output columns whose tap `kw` lands inside the input row.
inline void valid_columns(const ConvGeometry& g, std::size_t kw, std::size_t& lo,
                          std::size_t& hi) {
  // iw = ow*stride + kw - pad must lie in [0, w).
  lo = 0;
  if (kw < g.pad) lo = (g.pad - kw + g.stride - 1) / g.stride;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(g.w) - 1 +
                              static_cast<std::ptrdiff_t>(g.pad) - static_cast<std::ptrdiff_t>(kw);
  if (last < 0) {
    hi = 0;
    return;
  }
  hi = std::min(g.ow, static_cast<std::size_t>(last) / g.stride + 1);
  if (hi < lo) hi = lo;
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  const auto g = detail::conv_geometry(input, kernels, bias, stride, padding);
  Tensor<T> out({g.cout, g.oh, g.ow});
  const T* in = input.data();
  const T* ker = kernels.data();
  T* o = out.data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* oc = o + co * g.oh * g.ow;
    std::fill(oc, oc + g.oh * g.ow, bias[co]);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* ic = in + ci * g.h * g.w;
      const T* kc = ker + (co * g.cin + ci) * g.k * g.k;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const T kv = kc[kh * g.k + kw];
          std::size_t lo, hi;
          detail::valid_columns(g, kw, lo, hi);
          for (std::size_t oh = 0; oh < g.oh; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const T* irow = ic + ih * g.w;
            T* orow = oc + oh * g.ow;
            for (std::size_t ow = lo; ow < hi; ++ow) {
              orow[ow] += kv * irow[ow * g.stride + kw - g.pad];
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
struct Conv2dGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> kernels;
  Tensor<T> bias;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                               const Tensor<T>& bias, const Tensor<T>& grad_out,
                               std::size_t stride = 1, std::size_t padding = 0,
                               bool need_input_grad = true) {
  const auto g = detail::conv_geometry(input, kernels, bias, stride, padding);
  if (grad_out.shape() != Shape{g.cout, g.oh, g.ow}) {
    throw ShapeError("conv2d_backward upstream gradient " + shape_str(grad_out.shape()) +
                     " does not match output " + shape_str({g.cout, g.oh, g.ow}));
  }
  Conv2dGrads<T> r{need_input_grad ? Tensor<T>(input.shape()) : Tensor<T>{},
                   Tensor<T>(kernels.shape()), Tensor<T>(bias.shape())};
  const T* in = input.data();
  const T* ker = kernels.data();
  const T* go = grad_out.data();
  T* gi = need_input_grad ? r.input.data() : nullptr;
  T* gk = r.kernels.data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    const T* gc = go + co * g.oh * g.ow;
    T bsum = 0;
    for (std::size_t i = 0; i < g.oh * g.ow; ++i) bsum += gc[i];
    r.bias[co] = bsum;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* ic = in + ci * g.h * g.w;
      const T* kc = ker + (co * g.cin + ci) * g.k * g.k;
      T* gkc = gk + (co * g.cin + ci) * g.k * g.k;
      T* gic = gi ? gi + ci * g.h * g.w : nullptr;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const T kv = kc[kh * g.k + kw];
          std::size_t lo, hi;
          detail::valid_columns(g, kw, lo, hi);
          T acc = 0;
          for (std::size_t oh = 0; oh < g.oh; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const T* irow = ic + ih * g.w;
            const T* grow = gc + oh * g.ow;
            for (std::size_t ow = lo; ow < hi; ++ow) acc += grow[ow] * irow[ow * g.stride + kw - g.pad];
            if (gic) {
              T* girow = gic + ih * g.w;
              for (std::size_t ow = lo; ow < hi; ++ow) girow[ow * g.stride + kw - g.pad] += kv * grow[ow];
            }
          }
          gkc[kh * g.k + kw] += acc;
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// max_pool2d over [C,H,W]; ties resolve to the first element in row-major order.

template <class T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 3) throw ShapeError("max_pool2d expects [C,H,W], got " + shape_str(input.shape()));
  if (window == 0 || stride == 0) throw ShapeError("max_pool2d window and stride must be >= 1");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (window > h || window > w) {
    throw ShapeError("max_pool2d window " + std::to_string(window) + " exceeds input " +
                     shape_str(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        T best = input.at(ch, y * stride, x * stride);
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx)
            best = std::max(best, input.at(ch, y * stride + dy, x * stride + dx));
        out.at(ch, y, x) = best;
      }
  return out;
}

template <class T>
Tensor<T> max_pool2d_backward(const Tensor<T>& input, const Tensor<T>& grad_out,
                              std::size_t window, std::size_t stride) {
  const std::size_t c = input.dim(0);
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
  Tensor<T> gi(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t by = y * stride, bx = x * stride;
        T best = input.at(ch, by, bx);
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const T v = input.at(ch, y * stride + dy, x * stride + dx);
            if (v > best) {
              best = v;
              by = y * stride + dy;
              bx = x * stride + dx;
            }
          }
        gi.at(ch, by, bx) += grad_out.at(ch, y, x);
      }
  return gi;
}

// ---------------------------------------------------------------------------
// relu; the derivative at exactly 0 is taken as 0.

template <class T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  return out;
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  Tensor<T> gi(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) gi[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return gi;
}

// ---------------------------------------------------------------------------
// linear: weight [d_out, d_in] times input [d_in] plus bias [d_out].

template <class T>
void check_linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 1 || weight.rank() != 2 || bias.rank() != 1 ||
      weight.dim(1) != input.dim(0) || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("linear extent mismatch: input " + shape_str(input.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
}

template <class T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_linear(input, weight, bias);
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  Tensor<T> out({dout});
  for (std::size_t o = 0; o < dout; ++o) {
    const T* row = weight.data() + o * din;
    T acc = bias[o];
    for (std::size_t i = 0; i < din; ++i) acc += row[i] * input[i];
    out[o] = acc;
  }
  return out;
}

template <class T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <class T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& bias, const Tensor<T>& grad_out) {
  check_linear(input, weight, bias);
  const std::size_t dout = weight.dim(0), din = weight.dim(1);
  LinearGrads<T> r{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), grad_out.reshaped({dout})};
  for (std::size_t o = 0; o < dout; ++o) {
    const T go = grad_out[o];
    const T* row = weight.data() + o * din;
    T* grow = r.weight.data() + o * din;
    for (std::size_t i = 0; i < din; ++i) {
      grow[i] = go * input[i];
      r.input[i] += go * row[i];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy

inline constexpr double kProbabilityFloor = 1e-12;

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 1 || logits.size() < 2) {
    throw ShapeError("softmax expects a vector of length >= 2, got " + shape_str(logits.shape()));
  }
  T mx = -std::numeric_limits<T>::infinity();
  for (auto v : logits.values()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    mx = std::max(mx, v);
  }
  Tensor<T> out(logits.shape());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out.values()) v /= sum;
  return out;
}

// Loss for a single sample with true class `label`. Probabilities are floored
// at kProbabilityFloor inside the log so a confident miss stays finite.
template <class T>
T cross_entropy(const Tensor<T>& prob, std::size_t label) {
  if (label >= prob.size()) {
    throw ArgumentError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                        std::to_string(prob.size()) + " classes");
  }
  return -std::log(std::max(prob[label], static_cast<T>(kProbabilityFloor)));
}

// One-hot form: -sum_m y_m log(sigma_m).
template <class T>
T cross_entropy(const Tensor<T>& prob, const Tensor<T>& one_hot) {
  if (prob.shape() != one_hot.shape()) {
    throw ShapeError("cross_entropy: prob " + shape_str(prob.shape()) + " vs label " +
                     shape_str(one_hot.shape()));
  }
  T loss = 0;
  for (std::size_t m = 0; m < prob.size(); ++m) {
    if (one_hot[m] != T{0}) loss -= one_hot[m] * std::log(std::max(prob[m], static_cast<T>(kProbabilityFloor)));
  }
  return loss;
}

// Mean over the batch (the 1/N factor).
template <class T>
T cross_entropy(std::span<const Tensor<T>> probs, std::span<const std::size_t> labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw ShapeError("cross_entropy: " + std::to_string(probs.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  T total = 0;
  for (std::size_t n = 0; n < probs.size(); ++n) total += cross_entropy(probs[n], labels[n]);
  return total / static_cast<T>(probs.size());
}

// Gradient of cross_entropy(softmax(z), label) with respect to z: sigma - y.
template <class T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& prob, std::size_t label) {
  Tensor<T> g = prob;
  g.drop_grad();
  g[label] -= T{1};
  return g;
}

// ---------------------------------------------------------------------------
// global_average_pool: [C,H,W] -> [C], the per-channel spatial mean.

template <class T>
Tensor<T> global_average_pool(const Tensor<T>& f) {
  if (f.rank() != 3) throw ShapeError("global_average_pool expects [C,H,W], got " + shape_str(f.shape()));
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Tensor<T> g({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    const T* p = f.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    g[ch] = acc / static_cast<T>(hw);
  }
  return g;
}

template <class T>
Tensor<T> global_average_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  Tensor<T> gi(input_shape);
  const std::size_t hw = input_shape[1] * input_shape[2];
  for (std::size_t ch = 0; ch < input_shape[0]; ++ch) {
    const T v = grad_out[ch] / static_cast<T>(hw);
    std::fill(gi.data() + ch * hw, gi.data() + (ch + 1) * hw, v);
  }
  return gi;
}

// ---------------------------------------------------------------------------
// SGD with classical momentum and L2 weight decay:
//   v <- momentum * v - lr * (g + weight_decay * theta);  theta <- theta + v

struct SgdOptions {
  double lr = 1e-4;
  double momentum = 0.99;
  double weight_decay = 1e-2;
};

template <class T>
void sgd_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads,
              std::span<Tensor<T>> velocity, const SgdOptions& opt) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(velocity.size()) +
                     " velocities");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != velocity[i].shape()) {
      throw ShapeError("sgd_step: tensor " + std::to_string(i) + " param " +
                       shape_str(params[i].shape()) + ", grad " + shape_str(grads[i].shape()) +
                       ", velocity " + shape_str(velocity[i].shape()));
    }
  }
  const T lr = static_cast<T>(opt.lr), mom = static_cast<T>(opt.momentum),
          wd = static_cast<T>(opt.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* theta = params[i].data();
    T* v = velocity[i].data();
    const T* g = grads[i].data();
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      v[j] = mom * v[j] - lr * (g[j] + wd * theta[j]);
      theta[j] += v[j];
    }
  }
}

}  // namespace amen
