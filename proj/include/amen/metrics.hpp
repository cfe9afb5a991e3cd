#pragma once

// Overall accuracy, sensitivity, positive predictive value and F1 from
// one-vs-rest confusion counts.

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "amen/error.hpp"

namespace amen {

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;  // index = class
  std::size_t positive_class = 1;
  std::uint64_t total = 0;

  std::size_t classes() const { return per_class.size(); }
  const ClassCounts& positive() const { return per_class.at(positive_class); }
};

// Labels must lie in [0, classes). For two classes the report describes
// `positive_class`; with more classes it is macro-averaged.
inline ConfusionCounts confusion(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                                 std::size_t positive_class = 1, std::size_t classes = 2) {
  if (truth.size() != pred.size()) {
    throw ShapeError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                     std::to_string(pred.size()) + " predictions");
  }
  if (classes < 2) throw ArgumentError("confusion: need at least 2 classes");
  if (positive_class >= classes) {
    throw ArgumentError("confusion: positive class " + std::to_string(positive_class) +
                        " out of range");
  }
  ConfusionCounts cc{std::vector<ClassCounts>(classes), positive_class, truth.size()};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || pred[i] >= classes) {
      throw ArgumentError("confusion: unknown label at index " + std::to_string(i));
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const bool t = truth[i] == c, p = pred[i] == c;
      auto& k = cc.per_class[c];
      if (t && p) ++k.tp;
      else if (!t && p) ++k.fp;
      else if (t && !p) ++k.fn;
      else ++k.tn;
    }
  }
  return cc;
}

// Each value is nullopt where its denominator is zero.
struct MetricReport {
  std::optional<double> oa, sen, ppv, f1;
};

namespace detail {

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline std::optional<double> mean_defined(const std::vector<std::optional<double>>& v) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& x : v)
    if (x) {
      sum += *x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Harmonic mean of sensitivity and PPV; 0 when both are 0.
inline std::optional<double> f1_score(std::optional<double> sen, std::optional<double> ppv) {
  if (!sen || !ppv) return std::nullopt;
  if (*sen + *ppv == 0.0) return 0.0;
  return 2.0 * *sen * *ppv / (*sen + *ppv);
}

inline MetricReport compute_metrics(const ConfusionCounts& counts) {
  MetricReport r;
  if (counts.per_class.empty()) return r;
  std::uint64_t correct = 0;
  for (const auto& k : counts.per_class) correct += k.tp;
  r.oa = detail::ratio(correct, counts.total);
  if (counts.classes() == 2) {
    const auto& k = counts.positive();
    r.sen = detail::ratio(k.tp, k.tp + k.fn);
    r.ppv = detail::ratio(k.tp, k.tp + k.fp);
  } else {
    std::vector<std::optional<double>> sens, ppvs;
    for (const auto& k : counts.per_class) {
      sens.push_back(detail::ratio(k.tp, k.tp + k.fn));
      ppvs.push_back(detail::ratio(k.tp, k.tp + k.fp));
    }
    r.sen = detail::mean_defined(sens);
    r.ppv = detail::mean_defined(ppvs);
  }
  r.f1 = f1_score(r.sen, r.ppv);
  return r;
}

inline MetricReport evaluate(std::span<const std::size_t> truth, std::span<const std::size_t> pred,
                             std::size_t positive_class = 1, std::size_t classes = 2) {
  return compute_metrics(confusion(truth, pred, positive_class, classes));
}

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

// {"OA": 0.8, ..., "raw": {"OA": 0.8000000001, ...}}; undefined values are null.
inline nlohmann::json to_json(const MetricReport& m) {
  nlohmann::json shown, raw;
  auto put = [&](const char* key, const std::optional<double>& v) {
    shown[key] = v ? nlohmann::json(round4(*v)) : nlohmann::json(nullptr);
    raw[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("OA", m.oa);
  put("Sen", m.sen);
  put("PPV", m.ppv);
  put("F1", m.f1);
  shown["raw"] = raw;
  return shown;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "  n/a ";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace amen
