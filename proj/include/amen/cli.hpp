#pragma once

// Command-line front end. `run_command` is the whole tool; tools/amen.cpp
// only forwards argv to it.
//
//   gen-data          write a synthetic dataset directory
//   train             run the multi-branch pipeline, write a run directory
//   eval              score a run's checkpoints on a dataset
//   ablate            Average / Boosting baselines next to the pipeline
//   sweep-lambda      rerun the pipeline for lambda in {1e-5, 1e-4, 1e-3, 1e-2}
//   export-attention  re-emit attention maps from a run's checkpoints
//
// Exit codes: 0 success, 1 runtime failure (one-line diagnostic on stderr),
// 2 usage error.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "amen/config.hpp"
#include "amen/data.hpp"
#include "amen/pipeline.hpp"
#include "amen/run_io.hpp"

namespace amen {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr double kSweepGrid[] = {1e-5, 1e-4, 1e-3, 1e-2};

namespace cli {

namespace fs = std::filesystem;

struct ConfigFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::size_t> scales;
  std::optional<double> lambda;
};

inline void add_config_flags(CLI::App* cmd, ConfigFlags& f, bool with_lambda = true) {
  cmd->add_option("--config", f.config, "JSON config file (defaults when omitted)");
  cmd->add_option("--seed", f.seed, "Override the config seed");
  cmd->add_option("--profile", f.profile, "Default profile")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--scales", f.scales, "Override the number of scales");
  if (with_lambda) cmd->add_option("--lambda", f.lambda, "Override lambda for every scale after the first");
}

inline PipelineConfig resolve_config(const ConfigFlags& f) {
  PipelineConfig c = f.config.empty() ? parse_config_text("{}", f.profile) : parse_config(f.config, f.profile);
  if (f.seed) c.seed = *f.seed;
  if (f.scales) {
    const double lam = c.scales > 1 ? c.lambdas.back() : 1e-3;
    c.scales = *f.scales;
    c.set_lambda(lam);
  }
  if (f.lambda) {
    if (!(*f.lambda >= 0.0)) throw ValidationError("lambda", "must be >= 0");
    c.set_lambda(*f.lambda);
  }
  validate_config(c);
  return c;
}

inline Dataset load_dataset(const std::string& dir, std::size_t image_size) {
  Dataset ds = load_image_dir(dir);
  if (ds.empty()) throw ArgumentError("dataset " + dir + " is empty");
  return resize_dataset(std::move(ds), image_size);
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Written before training starts; config.json alone reproduces the run.
inline void write_manifest(const fs::path& out, const std::string& command, const PipelineConfig& c,
                           const std::string& data, const std::vector<std::string>& outputs) {
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(c).dump(2) + "\n");
  nlohmann::json m{{"tool", "amen"},
                   {"version", kToolVersion},
                   {"command", command},
                   {"seed", c.seed},
                   {"data", data},
                   {"config", config_to_json(c)},
                   {"started_at", utc_now()},
                   {"outputs", outputs}};
  write_text(out / "run_manifest.json", m.dump(2) + "\n");
}

inline std::string lambda_dir(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "lambda_%.0e", lambda);
  return buf;
}

struct Context {
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_gen_data(const Context& ctx, const SyntheticOptions& o, const std::string& out) {
  const Dataset ds = gen_synthetic(o);
  save_image_dir(ds, out);
  ctx.out << "wrote " << ds.size() << " images to " << out << '\n';
  return 0;
}

inline int cmd_train(const Context& ctx, const ConfigFlags& f, const std::string& data, const std::string& out) {
  const PipelineConfig c = resolve_config(f);
  const Dataset ds = load_dataset(data, c.image_size);
  const auto [train, eval] = split(ds, c.eval_fraction, c.seed);
  std::vector<std::string> outputs{"metrics.json", "fused_predictions.csv"};
  for (std::size_t s = 1; s <= c.scales; ++s) outputs.push_back("scale_" + std::to_string(s) + "/");
  write_manifest(out, "train", c, data, outputs);
  const PipelineResult res = run_pipeline(train, eval, c);
  write_run_dir(res, eval, out);
  ctx.out << metrics_table(res.rows());
  return 0;
}

inline int cmd_eval(const Context& ctx, const std::string& run, const std::string& data, const std::string& out) {
  const PipelineConfig c = parse_config(fs::path(run) / "config.json");
  const Dataset ds = load_dataset(data, c.image_size);
  const auto branches = load_run_checkpoints(run, c.scales);
  const auto outs = replay_branches(branches, ds.images, c.lambdas);
  PipelineResult res;
  res.config = c;
  std::vector<std::vector<std::size_t>> votes;
  std::vector<std::vector<Tensor<Real>>> probs;
  for (std::size_t s = 0; s < outs.size(); ++s) {
    BranchModel b;
    b.params = branches[s];
    b.scale = s + 1;
    b.eval_pred = outs[s].labels;
    b.eval_prob = outs[s].probs;
    res.scale_metrics.push_back(evaluate(ds.labels, b.eval_pred, c.positive_class, ds.classes));
    votes.push_back(b.eval_pred);
    probs.push_back(b.eval_prob);
    res.branches.push_back(std::move(b));
  }
  res.fused = majority_vote(votes, probs, ds.classes);
  res.fused_metrics = evaluate(ds.labels, res.fused, c.positive_class, ds.classes);
  fs::create_directories(out);
  for (std::size_t s = 1; s <= res.branches.size(); ++s) {
    const auto& b = res.branches[s - 1];
    write_text(fs::path(out) / ("scale_" + std::to_string(s)) / "predictions.csv",
               predictions_csv(ds.ids, ds.labels, b.eval_pred, b.eval_prob));
  }
  write_text(fs::path(out) / "fused_predictions.csv", fused_csv(res, ds));
  auto m = metrics_json(res, ds);
  m["run"] = run;
  write_text(fs::path(out) / "metrics.json", m.dump(2) + "\n");
  ctx.out << metrics_table(res.rows());
  return 0;
}

inline int cmd_export_attention(const Context& ctx, const std::string& run, const std::string& data,
                                const std::string& out) {
  const PipelineConfig c = parse_config(fs::path(run) / "config.json");
  const Dataset ds = load_dataset(data, c.image_size);
  const auto outs = replay_branches(load_run_checkpoints(run, c.scales), ds.images, c.lambdas);
  for (std::size_t s = 1; s <= outs.size(); ++s) {
    write_attention_maps(fs::path(out) / ("scale_" + std::to_string(s)) / "attention", ds.ids, outs[s - 1].attention);
  }
  ctx.out << "wrote " << outs.size() * ds.size() << " attention maps to " << out << '\n';
  return 0;
}

inline int cmd_ablate(const Context& ctx, const ConfigFlags& f, const std::string& data, const std::string& out,
                      std::size_t repeats) {
  const PipelineConfig c = resolve_config(f);
  const Dataset ds = load_dataset(data, c.image_size);
  const auto [train, eval] = split(ds, c.eval_fraction, c.seed);
  write_manifest(out, "ablate", c, data, {"ablation.json", "ablation.txt"});
  const AblationResult res = run_ablation(train, eval, c, repeats);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : res.rows()) rows.push_back(row_json(r));
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& m : res.run_metrics) runs.push_back(to_json(m));
  const nlohmann::json j{{"repeats", repeats}, {"rows", rows}, {"runs", runs}, {"seed", c.seed}};
  write_text(fs::path(out) / "ablation.json", j.dump(2) + "\n");
  const std::string table = metrics_table(res.rows());
  write_text(fs::path(out) / "ablation.txt", table);
  ctx.out << table;
  return 0;
}

inline int cmd_sweep(const Context& ctx, const ConfigFlags& f, const std::string& data, const std::string& out) {
  const PipelineConfig base = resolve_config(f);
  const Dataset ds = load_dataset(data, base.image_size);
  const auto [train, eval] = split(ds, base.eval_fraction, base.seed);
  std::vector<std::string> outputs{"sweep.json", "sweep.txt"};
  for (double l : kSweepGrid) outputs.push_back(lambda_dir(l) + "/");
  write_manifest(out, "sweep-lambda", base, data, outputs);

  nlohmann::json entries = nlohmann::json::array();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-11s", "lambda");
  std::string table = buf;
  for (std::size_t sc = 1; sc <= base.scales; ++sc) {
    std::snprintf(buf, sizeof buf, "  %-9s", ("OA-" + scale_name(sc).substr(6)).c_str());
    table += buf;
  }
  std::snprintf(buf, sizeof buf, "  %8s  %6s  %6s  %6s\n", "OA-fused", "Sen", "PPV", "F1");
  table += buf;
  double lo = 1.0, hi = 0.0;
  for (double lambda : kSweepGrid) {
    PipelineConfig c = base;
    c.set_lambda(lambda);
    const PipelineResult res = run_pipeline(train, eval, c);
    write_run_dir(res, eval, fs::path(out) / lambda_dir(lambda));
    nlohmann::json scales = nlohmann::json::array();
    for (const auto& r : res.rows()) scales.push_back(row_json(r));
    const double oa = res.fused_metrics.oa.value_or(0.0);
    lo = std::min(lo, oa);
    hi = std::max(hi, oa);
    entries.push_back({{"lambda", lambda},
                       {"OA", res.fused_metrics.oa ? nlohmann::json(round4(oa)) : nlohmann::json(nullptr)},
                       {"fused", to_json(res.fused_metrics)},
                       {"rows", scales}});
    std::snprintf(buf, sizeof buf, "%-11.0e", lambda);
    table += buf;
    for (const auto& m : res.scale_metrics) {
      std::snprintf(buf, sizeof buf, "  %-9s", format_metric(m.oa).c_str());
      table += buf;
    }
    const auto& fm = res.fused_metrics;
    std::snprintf(buf, sizeof buf, "  %8s  %6s  %6s  %6s\n", format_metric(fm.oa).c_str(), format_metric(fm.sen).c_str(),
                  format_metric(fm.ppv).c_str(), format_metric(fm.f1).c_str());
    table += buf;
  }
  const nlohmann::json j{{"grid", kSweepGrid}, {"entries", entries}, {"oa_spread", hi - lo}, {"seed", base.seed}};
  write_text(fs::path(out) / "sweep.json", j.dump(2) + "\n");
  write_text(fs::path(out) / "sweep.txt", table);
  ctx.out << table;
  return 0;
}

}  // namespace cli

inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"Attention-enhanced multi-branch image classifier", "amen"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SyntheticOptions gen;
  std::string gen_out;
  auto* g = app.add_subcommand("gen-data", "Write a synthetic dataset directory");
  g->add_option("--n", gen.n, "Number of images")->default_val(400);
  g->add_option("--seed", gen.seed, "Generator seed")->default_val(0);
  g->add_option("--image-size", gen.image_size, "Image side length")->default_val(32);
  g->add_option("--detail-size", gen.detail_size, "Micro-pattern side length")->default_val(7);
  g->add_option("--noise", gen.noise, "Background noise standard deviation")->default_val(0.1);
  g->add_option("--out", gen_out, "Output directory")->required();

  ConfigFlags train_f, ablate_f, sweep_f;
  std::string data, outdir, run;
  std::size_t repeats = 3;

  auto* t = app.add_subcommand("train", "Train all scales and write a run directory");
  add_config_flags(t, train_f);
  t->add_option("--data", data, "Dataset directory with manifest.csv")->required();
  t->add_option("--out", outdir, "Run directory")->required();

  auto* e = app.add_subcommand("eval", "Score a run's checkpoints on a dataset");
  e->add_option("--run", run, "Run directory written by train")->required();
  e->add_option("--data", data, "Dataset directory with manifest.csv")->required();
  e->add_option("--out", outdir, "Output directory")->required();

  auto* a = app.add_subcommand("ablate", "Average and Boosting baselines next to the pipeline");
  add_config_flags(a, ablate_f);
  a->add_option("--data", data, "Dataset directory with manifest.csv")->required();
  a->add_option("--out", outdir, "Output directory")->required();
  a->add_option("--repeats", repeats, "Independent single-branch runs")->default_val(3);

  auto* s = app.add_subcommand("sweep-lambda", "Rerun the pipeline over the lambda grid");
  add_config_flags(s, sweep_f, false);
  s->add_option("--data", data, "Dataset directory with manifest.csv")->required();
  s->add_option("--out", outdir, "Output directory")->required();

  auto* x = app.add_subcommand("export-attention", "Re-emit attention maps from a run's checkpoints");
  x->add_option("--run", run, "Run directory written by train")->required();
  x->add_option("--data", data, "Dataset directory with manifest.csv")->required();
  x->add_option("--out", outdir, "Output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << "amen: " << pe.what() << '\n' << app.help();
    return 2;
  }

  const Context ctx{out, err};
  try {
    if (*g) return cmd_gen_data(ctx, gen, gen_out);
    if (*t) return cmd_train(ctx, train_f, data, outdir);
    if (*e) return cmd_eval(ctx, run, data, outdir);
    if (*a) return cmd_ablate(ctx, ablate_f, data, outdir, repeats);
    if (*s) return cmd_sweep(ctx, sweep_f, data, outdir);
    if (*x) return cmd_export_attention(ctx, run, data, outdir);
  } catch (const std::exception& ex) {
    err << "amen: error: " << ex.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace amen
