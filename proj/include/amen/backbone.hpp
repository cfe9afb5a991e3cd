#pragma once

// Small configurable CNN: a feature extractor (conv / relu / maxpool stack)
// producing a [C,H,W] feature map, and a fully-connected head over the
// flattened map that produces class logits.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "amen/error.hpp"
#include "amen/ops.hpp"
#include "amen/tensor.hpp"

namespace amen {

struct BackboneSpec {
  std::size_t input_channels = 1;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::vector<LayerSpec> features;
  std::vector<std::size_t> hidden;  // head hidden widths, relu after each
  std::size_t classes = 2;
  std::string init = "he_normal";

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

// 2 x [conv 3x3 (pad 1), relu, maxpool 2x2] with 8 then 16 channels.
inline BackboneSpec desk_backbone(std::size_t image_size = 32, std::size_t channels = 1,
                                  std::size_t classes = 2) {
  BackboneSpec s;
  s.input_channels = channels;
  s.input_height = s.input_width = image_size;
  s.features = {LayerSpec::conv(channels, 8, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                LayerSpec::conv(8, 16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2)};
  s.classes = classes;
  return s;
}

struct FeatureShape {
  std::size_t channels, height, width;
  std::size_t numel() const { return channels * height * width; }
  Shape shape() const { return {channels, height, width}; }
};

// Walks the feature stack and returns the output extents. Throws SpecError
// naming the first layer that cannot be applied.
inline FeatureShape feature_shape(const BackboneSpec& spec) {
  if (spec.input_channels == 0 || spec.input_height == 0 || spec.input_width == 0) {
    throw SpecError("input extents must be positive");
  }
  if (spec.classes < 2) throw SpecError("head needs at least 2 classes");
  if (spec.init != "he_normal") throw SpecError("unknown init scheme '" + spec.init + "'");
  for (auto w : spec.hidden) {
    if (w == 0) throw SpecError("head hidden widths must be positive");
  }
  FeatureShape fs{spec.input_channels, spec.input_height, spec.input_width};
  for (std::size_t i = 0; i < spec.features.size(); ++i) {
    const auto& l = spec.features[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    try {
      validate_layer(l);
    } catch (const SpecError& e) {
      throw SpecError(where + ": " + e.what());
    }
    switch (l.kind) {
      case LayerKind::conv:
        if (l.in != fs.channels) {
          throw SpecError(where + ": expects " + std::to_string(l.in) + " input channels, gets " +
                          std::to_string(fs.channels));
        }
        if (fs.height + 2 * l.padding < l.kernel || fs.width + 2 * l.padding < l.kernel) {
          throw SpecError(where + ": spatial extent " + std::to_string(fs.height) + "x" +
                          std::to_string(fs.width) + " collapses below 1");
        }
        fs = {l.out, conv_out_extent(fs.height, l.kernel, l.stride, l.padding),
              conv_out_extent(fs.width, l.kernel, l.stride, l.padding)};
        break;
      case LayerKind::maxpool:
        if (fs.height < l.kernel || fs.width < l.kernel) {
          throw SpecError(where + ": spatial extent " + std::to_string(fs.height) + "x" +
                          std::to_string(fs.width) + " collapses below 1");
        }
        fs = {fs.channels, (fs.height - l.kernel) / l.stride + 1, (fs.width - l.kernel) / l.stride + 1};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::linear:
      case LayerKind::gap:
        throw SpecError(where + ": not allowed in the feature extractor");
    }
  }
  return fs;
}

// Feature tensors first (kernels, bias per conv), then head tensors
// (weight, bias per linear). One flat list so an optimizer can walk it.
template <class T>
struct BranchParams {
  BackboneSpec spec;
  std::vector<Tensor<T>> tensors;
  std::size_t feature_count = 0;

  std::span<Tensor<T>> feature() { return std::span(tensors).first(feature_count); }
  std::span<const Tensor<T>> feature() const { return std::span(tensors).first(feature_count); }
  std::span<Tensor<T>> head() { return std::span(tensors).subspan(feature_count); }
  std::span<const Tensor<T>> head() const { return std::span(tensors).subspan(feature_count); }

  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }

  template <class U>
  BranchParams<U> cast() const {
    BranchParams<U> out{spec, {}, feature_count};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  friend bool operator==(const BranchParams& a, const BranchParams& b) {
    return a.spec == b.spec && a.feature_count == b.feature_count && a.tensors == b.tensors;
  }
};

// Zero-valued tensors with the same layout as `p` (gradients, velocities).
template <class T>
std::vector<Tensor<T>> zeros_like(const BranchParams<T>& p) {
  std::vector<Tensor<T>> z;
  z.reserve(p.tensors.size());
  for (const auto& t : p.tensors) z.emplace_back(t.shape());
  return z;
}

// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
template <class T>
BranchParams<T> init_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  const FeatureShape fs = feature_shape(spec);
  std::mt19937_64 rng(seed);
  auto he = [&](Shape shape, std::size_t fan_in) {
    Tensor<T> w(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : w.values()) v = static_cast<T>(dist(rng));
    return w;
  };
  BranchParams<T> p;
  p.spec = spec;
  for (const auto& l : spec.features) {
    if (l.kind != LayerKind::conv) continue;
    p.tensors.push_back(he({l.out, l.in, l.kernel, l.kernel}, l.in * l.kernel * l.kernel));
    p.tensors.emplace_back(Shape{l.out});
  }
  p.feature_count = p.tensors.size();
  std::size_t width = fs.numel();
  auto add_linear = [&](std::size_t out) {
    p.tensors.push_back(he({out, width}, width));
    p.tensors.emplace_back(Shape{out});
    width = out;
  };
  for (auto h : spec.hidden) add_linear(h);
  add_linear(spec.classes);
  return p;
}

// Deep copy used to seed the next branch from the previous one.
template <class T>
BranchParams<T> clone_into_next_branch(const BranchParams<T>& params) {
  BranchParams<T> copy = params;
  for (auto& t : copy.tensors) t.drop_grad();
  return copy;
}

// Intermediate activations: acts[0] is the input, acts[i+1] the output of
// feature layer i. The last entry is the feature map F.
template <class T>
struct FeatureTrace {
  std::vector<Tensor<T>> acts;
};

template <class T>
Tensor<T> feature_extract(const Tensor<T>& image, const BranchParams<T>& params,
                          FeatureTrace<T>* trace = nullptr) {
  const auto& spec = params.spec;
  const Shape expected{spec.input_channels, spec.input_height, spec.input_width};
  if (image.shape() != expected) {
    throw ShapeError("feature_extract: image " + shape_str(image.shape()) + " vs backbone input " +
                     shape_str(expected));
  }
  Tensor<T> x = image;
  x.drop_grad();
  if (trace) trace->acts.assign(1, x);
  std::size_t ti = 0;
  for (const auto& l : spec.features) {
    switch (l.kind) {
      case LayerKind::conv:
        x = conv2d(x, params.tensors[ti], params.tensors[ti + 1], l.stride, l.padding);
        ti += 2;
        break;
      case LayerKind::relu:
        x = relu(x);
        break;
      case LayerKind::maxpool:
        x = max_pool2d(x, l.kernel, l.stride);
        break;
      default:
        throw SpecError("unsupported feature layer");
    }
    if (trace) trace->acts.push_back(x);
  }
  return x;
}

template <class T>
std::vector<Tensor<T>> feature_extract(std::span<const Tensor<T>> batch,
                                       const BranchParams<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(batch.size());
  for (const auto& x : batch) out.push_back(feature_extract(x, params));
  return out;
}

// acts[0] is the flattened feature vector; pre[i] the output of linear i.
template <class T>
struct HeadTrace {
  std::vector<Tensor<T>> acts;
  std::vector<Tensor<T>> pre;
};

template <class T>
Tensor<T> head_logits(const Tensor<T>& features, const BranchParams<T>& params,
                      HeadTrace<T>* trace = nullptr) {
  const auto head = params.head();
  if (head.empty() || features.size() != head[0].dim(1)) {
    throw ShapeError("classify: feature map " + shape_str(features.shape()) +
                     " does not flatten to head input width " +
                     (head.empty() ? std::string("?") : std::to_string(head[0].dim(1))));
  }
  Tensor<T> x = features.reshaped({features.size()});
  if (trace) {
    trace->acts.assign(1, x);
    trace->pre.clear();
  }
  const std::size_t layers = head.size() / 2;
  for (std::size_t i = 0; i < layers; ++i) {
    Tensor<T> z = linear(x, head[2 * i], head[2 * i + 1]);
    if (trace) trace->pre.push_back(z);
    x = (i + 1 < layers) ? relu(z) : z;
    if (trace && i + 1 < layers) trace->acts.push_back(x);
  }
  return x;
}

// sigma = softmax(fc(F)).
template <class T>
Tensor<T> classify(const Tensor<T>& features, const BranchParams<T>& params) {
  return softmax(head_logits(features, params));
}

template <class T>
std::vector<Tensor<T>> classify(std::span<const Tensor<T>> features, const BranchParams<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(classify(f, params));
  return out;
}

// Cross-entropy loss of one sample and its gradients. Parameter gradients are
// scaled by `weight` and added into `grads` (laid out like params.tensors);
// the input gradient is written to `input_grad` when given.
template <class T>
T loss_and_grad(const Tensor<T>& image, std::size_t label, const BranchParams<T>& params,
                std::vector<Tensor<T>>& grads, T weight = T{1}, Tensor<T>* input_grad = nullptr,
                Tensor<T>* prob_out = nullptr) {
  FeatureTrace<T> ft;
  HeadTrace<T> ht;
  const Tensor<T> f = feature_extract(image, params, &ft);
  const Tensor<T> logits = head_logits(f, params, &ht);
  const Tensor<T> prob = softmax(logits);
  if (prob_out) *prob_out = prob;
  const T loss = cross_entropy(prob, label);

  auto accumulate = [&](std::size_t idx, const Tensor<T>& g) {
    T* dst = grads[idx].data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += weight * g[i];
  };

  Tensor<T> g = softmax_cross_entropy_backward(prob, label);
  const auto head = params.head();
  const std::size_t layers = head.size() / 2;
  for (std::size_t i = layers; i-- > 0;) {
    if (i + 1 < layers) g = relu_backward(ht.pre[i], g);
    auto lg = linear_backward(ht.acts[i], head[2 * i], head[2 * i + 1], g);
    accumulate(params.feature_count + 2 * i, lg.weight);
    accumulate(params.feature_count + 2 * i + 1, lg.bias);
    g = std::move(lg.input);
  }
  g = g.reshaped(f.shape());

  const auto& spec = params.spec;
  std::size_t ti = params.feature_count;
  for (std::size_t i = spec.features.size(); i-- > 0;) {
    const auto& l = spec.features[i];
    const Tensor<T>& in = ft.acts[i];
    switch (l.kind) {
      case LayerKind::conv: {
        ti -= 2;
        const bool need_input = i > 0 || input_grad != nullptr;
        auto cg = conv2d_backward(in, params.tensors[ti], params.tensors[ti + 1], g, l.stride,
                                  l.padding, need_input);
        accumulate(ti, cg.kernels);
        accumulate(ti + 1, cg.bias);
        g = std::move(cg.input);
        break;
      }
      case LayerKind::relu:
        g = relu_backward(in, g);
        break;
      case LayerKind::maxpool:
        g = max_pool2d_backward(in, g, l.kernel, l.stride);
        break;
      default:
        break;
    }
  }
  if (input_grad) *input_grad = std::move(g);
  return loss;
}

}  // namespace amen
