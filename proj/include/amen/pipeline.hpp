#pragma once

// Multi-branch training: each scale trains a backbone on images enhanced by
// the previous scale's attention maps, then the per-scale predictions are
// fused by majority vote.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "amen/attention.hpp"
#include "amen/backbone.hpp"
#include "amen/config.hpp"
#include "amen/data.hpp"
#include "amen/error.hpp"
#include "amen/metrics.hpp"
#include "amen/ops.hpp"
#include "amen/parallel.hpp"

namespace amen {

using Real = float;

inline std::size_t argmax(const Tensor<Real>& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

// Per-image outputs of one branch: class probabilities, predicted labels and
// the normalized attention map upsampled to image extents.
struct BranchOutputs {
  std::vector<Tensor<Real>> probs;
  std::vector<std::size_t> labels;
  std::vector<AttentionMap<Real>> attention;
};

inline BranchOutputs infer_branch(const BranchParams<Real>& params, std::span<const Tensor<Real>> images,
                                  std::size_t scale = 0) {
  BranchOutputs out;
  out.probs.resize(images.size());
  out.labels.resize(images.size());
  out.attention.resize(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const Tensor<Real> f = feature_extract(images[i], params);
    out.probs[i] = classify(f, params);
    out.labels[i] = argmax(out.probs[i]);
    out.attention[i] = image_attention(f, images[i].dim(2), images[i].dim(1), scale);
  });
  return out;
}

struct BranchModel {
  BranchParams<Real> params;
  std::size_t scale = 1;
  std::vector<std::size_t> train_pred, eval_pred;
  std::vector<Tensor<Real>> train_prob, eval_prob;
  double final_loss = 0;               // mean cross-entropy on the training inputs after training
  std::vector<double> epoch_loss;      // mean mini-batch loss per epoch
};

// Mean cross-entropy over `images` at fixed parameters.
inline double dataset_loss(const BranchParams<Real>& params, std::span<const Tensor<Real>> images,
                           std::span<const std::size_t> labels) {
  std::vector<double> losses(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    losses[i] = cross_entropy(classify(feature_extract(images[i], params), params), labels[i]);
  });
  double total = 0;
  for (double l : losses) total += l;
  return images.empty() ? 0.0 : total / static_cast<double>(images.size());
}

// Mini-batch SGD on the mean cross-entropy. The sample order of each epoch
// comes from a generator seeded with (shuffle_seed, epoch). Per-sample
// gradients are summed in batch order, so results do not depend on the
// worker count.
inline BranchModel train_branch(std::span<const Tensor<Real>> images, std::span<const std::size_t> labels,
                                BranchParams<Real> init, const PipelineConfig& cfg,
                                std::uint64_t shuffle_seed, std::size_t scale = 1) {
  if (images.empty() || images.size() != labels.size()) {
    throw ArgumentError("train_branch: need a nonempty dataset with one label per image");
  }
  for (auto l : labels)
    if (l >= init.spec.classes) throw ArgumentError("train_branch: label out of range");
  if (cfg.batch_size == 0) throw ArgumentError("train_branch: batch_size must be >= 1");

  BranchModel model;
  model.scale = scale;
  model.params = std::move(init);
  auto& params = model.params;
  auto velocity = zeros_like(params);
  const SgdOptions opt{cfg.lr, cfg.momentum, cfg.weight_decay};

  const std::size_t n = images.size();
  std::vector<std::size_t> order(n);
  std::vector<std::vector<Tensor<Real>>> sample_grads(std::min(cfg.batch_size, n), zeros_like(params));
  std::vector<Real> sample_loss(sample_grads.size());
  auto grads = zeros_like(params);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(shuffle_seed), static_cast<std::uint32_t>(shuffle_seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      const Real weight = Real{1} / static_cast<Real>(b);
      try {
        parallel_for(b, [&](std::size_t k) {
          for (auto& g : sample_grads[k]) g.fill(Real{0});
          const std::size_t idx = order[start + k];
          sample_loss[k] = loss_and_grad(images[idx], labels[idx], params, sample_grads[k], weight);
        });
      } catch (const NumericError& e) {
        // Overflowing logits: the previous step diverged.
        throw TrainingError(epoch + 1, e.what());
      }
      for (auto& g : grads) g.fill(Real{0});
      double batch_loss = 0;
      for (std::size_t k = 0; k < b; ++k) {
        batch_loss += sample_loss[k];
        for (std::size_t t = 0; t < grads.size(); ++t) {
          Real* dst = grads[t].data();
          const Real* src = sample_grads[k][t].data();
          for (std::size_t i = 0; i < grads[t].size(); ++i) dst[i] += src[i];
        }
      }
      batch_loss /= static_cast<double>(b);
      if (!std::isfinite(batch_loss)) throw TrainingError(epoch + 1, "non-finite loss");
      sgd_step<Real>(params.tensors, grads, velocity, opt);
      epoch_total += batch_loss;
      ++batches;
    }
    if (!params.all_finite()) throw TrainingError(epoch + 1, "non-finite parameters");
    model.epoch_loss.push_back(epoch_total / static_cast<double>(batches));
  }

  const BranchOutputs out = infer_branch(params, images, scale);
  model.train_pred = out.labels;
  model.train_prob = out.probs;
  model.final_loss = dataset_loss(params, images, labels);
  if (!std::isfinite(model.final_loss)) throw TrainingError(cfg.epochs, "non-finite final loss");
  return model;
}

inline BranchModel train_branch(const Dataset& train, BranchParams<Real> init, const PipelineConfig& cfg,
                                std::uint64_t shuffle_seed, std::size_t scale = 1) {
  return train_branch(train.images, train.labels, std::move(init), cfg, shuffle_seed, scale);
}

// ---------------------------------------------------------------------------

// Per sample: the most voted label wins; ties go to the largest probability
// mass summed over branches, then to the lowest class index. The result does
// not depend on branch order. `probs` may be empty to skip the mass rule.
inline std::vector<std::size_t> majority_vote(const std::vector<std::vector<std::size_t>>& labels,
                                              const std::vector<std::vector<Tensor<Real>>>& probs,
                                              std::size_t classes = 2) {
  if (labels.empty()) throw ShapeError("majority_vote: no branches");
  const std::size_t n = labels[0].size();
  for (const auto& l : labels)
    if (l.size() != n) throw ShapeError("majority_vote: branches disagree on sample count");
  if (!probs.empty()) {
    if (probs.size() != labels.size()) throw ShapeError("majority_vote: probability/label branch count mismatch");
    for (const auto& p : probs)
      if (p.size() != n) throw ShapeError("majority_vote: probability vectors disagree on sample count");
  }
  for (const auto& l : labels)
    for (auto v : l) classes = std::max(classes, v + 1);

  std::vector<std::size_t> fused(n);
  std::vector<std::size_t> votes(classes);
  std::vector<double> mass;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const auto& l : labels) ++votes[l[i]];
    const std::size_t top = *std::max_element(votes.begin(), votes.end());
    std::optional<std::size_t> winner;
    double best_mass = -1;
    for (std::size_t c = 0; c < classes; ++c) {
      if (votes[c] != top) continue;
      double m = 0;
      if (!probs.empty()) {
        // Sorted before summing so the total is independent of branch order.
        mass.clear();
        for (const auto& p : probs) mass.push_back(c < p[i].size() ? static_cast<double>(p[i][c]) : 0.0);
        std::sort(mass.begin(), mass.end());
        for (double v : mass) m += v;
      }
      if (!winner || m > best_mass) {
        winner = c;
        best_mass = m;
      }
    }
    fused[i] = *winner;
  }
  return fused;
}

// ---------------------------------------------------------------------------

inline std::string scale_name(std::size_t s) {
  static const char* roman[] = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X"};
  return "Scale " + (s >= 1 && s <= 10 ? std::string(roman[s - 1]) : std::to_string(s));
}

struct MetricRow {
  std::string name;
  MetricReport metrics;
};

struct PipelineResult {
  PipelineConfig config;
  std::vector<BranchModel> branches;
  std::vector<std::size_t> fused;
  std::vector<MetricReport> scale_metrics;
  MetricReport fused_metrics;
  // Inputs each branch was trained / evaluated on (index s-1).
  std::vector<std::vector<Tensor<Real>>> train_inputs, eval_inputs;
  // Attention maps each branch produced on its eval inputs.
  std::vector<std::vector<AttentionMap<Real>>> eval_attention;

  std::vector<MetricRow> rows() const {
    std::vector<MetricRow> r;
    for (std::size_t s = 0; s < scale_metrics.size(); ++s) r.push_back({scale_name(s + 1), scale_metrics[s]});
    r.push_back({"Fused", fused_metrics});
    return r;
  }
};

// Seeds: scale s (1-based) trains with shuffle seed `seed + s`; fresh
// initializations use `seed + s - 1`.
inline std::uint64_t shuffle_seed_for(const PipelineConfig& cfg, std::size_t s) { return cfg.seed + s; }
inline std::uint64_t init_seed_for(const PipelineConfig& cfg, std::size_t s) { return cfg.seed + s - 1; }

inline PipelineResult run_pipeline(const Dataset& train, const Dataset& eval, const PipelineConfig& cfg) {
  validate_config(cfg);
  if (train.empty()) throw ArgumentError("run_pipeline: empty training split");
  if (!train.images.empty() && train.images[0].dim(1) != cfg.image_size) {
    throw ShapeError("run_pipeline: images are " + shape_str(train.images[0].shape()) +
                     ", config expects size " + std::to_string(cfg.image_size));
  }
  const std::size_t classes = std::max(train.classes, eval.classes);
  const BackboneSpec spec = backbone_for(cfg, train.images[0].dim(0), classes);

  PipelineResult res;
  res.config = cfg;
  std::vector<Tensor<Real>> x_train = train.images, x_eval = eval.images;
  std::vector<AttentionMap<Real>> att_train, att_eval;

  for (std::size_t s = 1; s <= cfg.scales; ++s) {
    if (s > 1) {
      const Real lambda = static_cast<Real>(cfg.lambdas[s - 1]);
      x_train = enhance_images<Real>(x_train, att_train, lambda);
      x_eval = enhance_images<Real>(x_eval, att_eval, lambda);
    }
    BranchParams<Real> init = (s == 1 || !cfg.handoff) ? init_backbone<Real>(spec, init_seed_for(cfg, s))
                                                       : clone_into_next_branch(res.branches.back().params);
    BranchModel model;
    try {
      model = train_branch(x_train, train.labels, std::move(init), cfg, shuffle_seed_for(cfg, s), s);
    } catch (const TrainingError& e) {
      throw TrainingError(e, s);
    }
    const BranchOutputs tr = infer_branch(model.params, x_train, s);
    const BranchOutputs ev = infer_branch(model.params, x_eval, s);
    model.eval_pred = ev.labels;
    model.eval_prob = ev.probs;
    att_train = tr.attention;
    att_eval = ev.attention;
    res.scale_metrics.push_back(evaluate(eval.labels, model.eval_pred, cfg.positive_class, classes));
    res.train_inputs.push_back(x_train);
    res.eval_inputs.push_back(x_eval);
    res.eval_attention.push_back(ev.attention);
    res.branches.push_back(std::move(model));
  }

  std::vector<std::vector<std::size_t>> votes;
  std::vector<std::vector<Tensor<Real>>> probs;
  for (const auto& b : res.branches) {
    votes.push_back(b.eval_pred);
    probs.push_back(b.eval_prob);
  }
  res.fused = eval.empty() ? std::vector<std::size_t>{} : majority_vote(votes, probs, classes);
  res.fused_metrics = evaluate(eval.labels, res.fused, cfg.positive_class, classes);
  return res;
}

// Replays a trained branch chain on new images: scale s sees the images
// enhanced by scale s-1's attention with weight lambdas[s-1].
inline std::vector<BranchOutputs> replay_branches(const std::vector<BranchParams<Real>>& branches,
                                                  std::vector<Tensor<Real>> images,
                                                  const std::vector<double>& lambdas) {
  if (lambdas.size() < branches.size()) throw ArgumentError("replay_branches: missing lambda values");
  std::vector<BranchOutputs> outs;
  for (std::size_t s = 1; s <= branches.size(); ++s) {
    if (s > 1) images = enhance_images<Real>(images, outs.back().attention, static_cast<Real>(lambdas[s - 1]));
    outs.push_back(infer_branch(branches[s - 1], images, s));
  }
  return outs;
}

// ---------------------------------------------------------------------------
// Ablation: independent single-branch runs on raw images, reported as the
// mean of their metrics ("Average") and as the metrics of their majority
// vote ("Boosting"). Repeat r (0-based) initializes from seed + r and
// shuffles with seed + r + 1, i.e. exactly what scale r+1 of a pipeline with
// handoff disabled and zero lambdas does.

struct AblationResult {
  std::vector<BranchModel> runs;
  std::vector<MetricReport> run_metrics;
  MetricReport average;
  MetricReport boosting;
  std::vector<std::size_t> boosting_labels;
  std::optional<PipelineResult> amen;

  std::vector<MetricRow> rows() const {
    std::vector<MetricRow> r{{"Average", average}, {"Boosting", boosting}};
    if (amen) {
      for (std::size_t s = 0; s < amen->scale_metrics.size(); ++s) r.push_back({scale_name(s + 1), amen->scale_metrics[s]});
      r.push_back({"AMEN (fused)", amen->fused_metrics});
    }
    return r;
  }
};

inline MetricReport average_metrics(const std::vector<MetricReport>& reports) {
  auto avg = [&](auto member) {
    std::vector<std::optional<double>> v;
    for (const auto& r : reports) v.push_back(r.*member);
    for (const auto& x : v)
      if (!x) return std::optional<double>{};
    return detail::mean_defined(v);
  };
  return {avg(&MetricReport::oa), avg(&MetricReport::sen), avg(&MetricReport::ppv), avg(&MetricReport::f1)};
}

inline AblationResult run_ablation(const Dataset& train, const Dataset& eval, const PipelineConfig& cfg,
                                   std::size_t repeats, bool distinct_seeds = true, bool with_pipeline = true) {
  if (repeats < 2) throw ArgumentError("run_ablation: repeats must be >= 2");
  validate_config(cfg);
  const std::size_t classes = std::max(train.classes, eval.classes);
  const BackboneSpec spec = backbone_for(cfg, train.images.at(0).dim(0), classes);
  AblationResult res;
  std::vector<std::vector<std::size_t>> votes;
  std::vector<std::vector<Tensor<Real>>> probs;
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::size_t k = distinct_seeds ? r : 0;
    BranchModel m;
    try {
      m = train_branch(train, init_backbone<Real>(spec, cfg.seed + k), cfg, cfg.seed + k + 1, 1);
    } catch (const TrainingError& e) {
      throw TrainingError(e, r + 1);
    }
    const BranchOutputs ev = infer_branch(m.params, eval.images, 1);
    m.eval_pred = ev.labels;
    m.eval_prob = ev.probs;
    res.run_metrics.push_back(evaluate(eval.labels, m.eval_pred, cfg.positive_class, classes));
    votes.push_back(m.eval_pred);
    probs.push_back(m.eval_prob);
    res.runs.push_back(std::move(m));
  }
  res.average = average_metrics(res.run_metrics);
  res.boosting_labels = majority_vote(votes, probs, classes);
  res.boosting = evaluate(eval.labels, res.boosting_labels, cfg.positive_class, classes);
  if (with_pipeline) res.amen = run_pipeline(train, eval, cfg);
  return res;
}

}  // namespace amen
