#pragma once

// Test-only generators and reference implementations. The oracles here are
// written as plainly as possible and share no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "amen/backbone.hpp"
#include "amen/tensor.hpp"

namespace amen::testing {

template <class T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// Values with |v| >= margin, so relu kinks are out of reach of a finite step.
template <class T = double>
Tensor<T> random_off_kink(Shape shape, std::mt19937_64& rng, double margin = 1e-3) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) {
    double x;
    do x = u(rng);
    while (std::abs(x) < margin);
    v = static_cast<T>(x);
  }
  return t;
}

// Naive cross-correlation with an explicit zero-padded copy of the input.
inline Tensor<double> conv2d_reference(const Tensor<double>& in, const Tensor<double>& k,
                                       const Tensor<double>& b, std::size_t stride, std::size_t pad) {
  const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2), O = k.dim(0), K = k.dim(2);
  const std::size_t PH = H + 2 * pad, PW = W + 2 * pad;
  std::vector<double> padded(C * PH * PW, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) padded[(c * PH + y + pad) * PW + x + pad] = in.at(c, y, x);
  const std::size_t OH = (PH - K) / stride + 1, OW = (PW - K) / stride + 1;
  Tensor<double> out({O, OH, OW});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        double s = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j)
              s += k[((o * C + c) * K + i) * K + j] * padded[(c * PH + y * stride + i) * PW + x * stride + j];
        out.at(o, y, x) = s;
      }
  return out;
}

// Flattens every parameter tensor into one vector and back.
template <class T>
Tensor<T> pack(const BranchParams<T>& p) {
  std::vector<T> v;
  for (const auto& t : p.tensors) v.insert(v.end(), t.values().begin(), t.values().end());
  return Tensor<T>({v.size()}, v);
}

template <class T>
BranchParams<T> unpack(const BranchParams<T>& layout, const Tensor<T>& flat) {
  BranchParams<T> p = layout;
  std::size_t off = 0;
  for (auto& t : p.tensors)
    for (auto& v : t.values()) v = flat[off++];
  return p;
}

// True when no relu input sits within `margin` of 0 and every live max-pool
// window has a unique maximum by at least `margin`.
template <class T>
bool away_from_kinks(const Tensor<T>& image, const BranchParams<T>& params, double margin = 1e-4) {
  FeatureTrace<T> tr;
  feature_extract(image, params, &tr);
  for (std::size_t i = 0; i < params.spec.features.size(); ++i) {
    const auto& l = params.spec.features[i];
    const auto& in = tr.acts[i];
    if (l.kind == LayerKind::relu) {
      for (auto v : in.values())
        if (std::abs(v) < margin) return false;
    } else if (l.kind == LayerKind::maxpool) {
      const std::size_t oh = (in.dim(1) - l.kernel) / l.stride + 1, ow = (in.dim(2) - l.kernel) / l.stride + 1;
      for (std::size_t c = 0; c < in.dim(0); ++c)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x) {
            std::vector<double> w;
            for (std::size_t dy = 0; dy < l.kernel; ++dy)
              for (std::size_t dx = 0; dx < l.kernel; ++dx) w.push_back(in.at(c, y * l.stride + dy, x * l.stride + dx));
            std::sort(w.rbegin(), w.rend());
            // A window of dead relu units ties at exactly 0 and stays there
            // under a small perturbation, so it is harmless.
            const bool dead = i > 0 && params.spec.features[i - 1].kind == LayerKind::relu && w[0] == 0.0;
            if (w.size() > 1 && !dead && w[0] - w[1] < margin) return false;
          }
    }
  }
  HeadTrace<T> ht;
  head_logits(tr.acts.back(), params, &ht);
  for (std::size_t i = 0; i + 1 < ht.pre.size(); ++i)
    for (auto v : ht.pre[i].values())
      if (std::abs(v) < margin) return false;
  return true;
}

// Brute-force metric oracle: counts by direct comparison of label pairs.
struct OracleMetrics {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline OracleMetrics count_pairs(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred,
                                 std::size_t positive) {
  OracleMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == positive;
    const bool p = pred[i] == positive;
    m.tp += t && p;
    m.fp += !t && p;
    m.fn += t && !p;
    m.tn += !t && !p;
  }
  return m;
}

}  // namespace amen::testing
