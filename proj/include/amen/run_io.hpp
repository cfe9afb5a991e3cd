#pragma once

// Run directory layout written by a pipeline run:
//
//   metrics.json                       per-scale and fused metric rows
//   fused_predictions.csv              image_id,true_label,pred_label,scale_1..scale_S
//   scale_<s>/predictions.csv          image_id,true_label,pred_label,prob_0..prob_{M-1}
//   scale_<s>/attention/<image_id>.pgm attention map on the eval image (8-bit P5)
//   scale_<s>/checkpoint.bin + .json   branch parameters (see checkpoint.hpp)
//
// Nothing here carries timestamps, so identical runs give identical bytes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "amen/checkpoint.hpp"
#include "amen/config.hpp"
#include "amen/image_io.hpp"
#include "amen/metrics.hpp"
#include "amen/pipeline.hpp"

namespace amen {

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

inline std::string predictions_csv(const std::vector<std::string>& ids, const std::vector<std::size_t>& truth,
                                   const std::vector<std::size_t>& pred, const std::vector<Tensor<Real>>& probs) {
  const std::size_t m = probs.empty() ? 0 : probs[0].size();
  std::string out = "image_id,true_label,pred_label";
  for (std::size_t c = 0; c < m; ++c) out += ",prob_" + std::to_string(c);
  out += '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += ids[i] + ',' + std::to_string(truth[i]) + ',' + std::to_string(pred[i]);
    for (std::size_t c = 0; c < m; ++c) out += ',' + format_real(probs[i][c]);
    out += '\n';
  }
  return out;
}

inline std::string fused_csv(const PipelineResult& res, const Dataset& eval) {
  std::string out = "image_id,true_label,pred_label";
  for (std::size_t s = 1; s <= res.branches.size(); ++s) out += ",scale_" + std::to_string(s);
  out += '\n';
  for (std::size_t i = 0; i < eval.size(); ++i) {
    out += eval.ids[i] + ',' + std::to_string(eval.labels[i]) + ',' + std::to_string(res.fused[i]);
    for (const auto& b : res.branches) out += ',' + std::to_string(b.eval_pred[i]);
    out += '\n';
  }
  return out;
}

inline nlohmann::json row_json(const MetricRow& row) {
  nlohmann::json j = to_json(row.metrics);
  j["name"] = row.name;
  return j;
}

inline nlohmann::json metrics_json(const PipelineResult& res, const Dataset& eval) {
  nlohmann::json rows = nlohmann::json::array();
  const auto named = res.rows();
  for (std::size_t i = 0; i < named.size(); ++i) {
    nlohmann::json r = row_json(named[i]);
    if (i < res.branches.size()) {
      r["scale"] = i + 1;
      r["lambda"] = res.config.lambdas[i];
      r["final_loss"] = res.branches[i].final_loss;
    }
    rows.push_back(std::move(r));
  }
  return {{"rows", rows},
          {"scales", res.config.scales},
          {"positive_class", res.config.positive_class},
          {"eval_size", eval.size()},
          {"seed", res.config.seed}};
}

inline void write_attention_maps(const std::filesystem::path& dir, const std::vector<std::string>& ids,
                                 const std::vector<AttentionMap<Real>>& maps) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ids.size(); ++i) write_pgm(dir / (ids[i] + ".pgm"), maps[i].values);
}

inline void write_run_dir(const PipelineResult& res, const Dataset& eval, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  for (std::size_t s = 1; s <= res.branches.size(); ++s) {
    const auto& b = res.branches[s - 1];
    const auto dir = out / ("scale_" + std::to_string(s));
    write_text(dir / "predictions.csv", predictions_csv(eval.ids, eval.labels, b.eval_pred, b.eval_prob));
    write_attention_maps(dir / "attention", eval.ids, res.eval_attention[s - 1]);
    save_checkpoint(dir / "checkpoint.bin", b.params);
  }
  write_text(out / "fused_predictions.csv", fused_csv(res, eval));
  write_text(out / "metrics.json", metrics_json(res, eval).dump(2) + "\n");
}

inline std::vector<BranchParams<Real>> load_run_checkpoints(const std::filesystem::path& run, std::size_t scales) {
  std::vector<BranchParams<Real>> out;
  for (std::size_t s = 1; s <= scales; ++s) {
    out.push_back(load_checkpoint<Real>(run / ("scale_" + std::to_string(s)) / "checkpoint.bin"));
  }
  return out;
}

// Plain-text table with one row per entry.
inline std::string metrics_table(const std::vector<MetricRow>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %7s %7s %7s %7s\n", "Method", "OA", "Sen", "PPV", "F1");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %7s %7s %7s %7s\n", r.name.c_str(), format_metric(r.metrics.oa).c_str(),
                  format_metric(r.metrics.sen).c_str(), format_metric(r.metrics.ppv).c_str(),
                  format_metric(r.metrics.f1).c_str());
    out += buf;
  }
  return out;
}

}  // namespace amen
