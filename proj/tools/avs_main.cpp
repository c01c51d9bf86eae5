#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avs/harness.hpp"
#include "avs/parallel.hpp"

namespace fs = std::filesystem;
using namespace avs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitMissingData = 2;
constexpr int kExitInternal = 3;

struct CommonArgs {
  std::string config;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string strategy;
  std::string out;
  int workers = 0;
  bool absolute_thresholds = false;
};

ExperimentConfig make_config(const CommonArgs& args) {
  ExperimentConfig cfg =
      args.config.empty() ? default_experiment_config() : load_experiment_config(args.config);
  if (args.seed_set) cfg.seeds = {args.seed};
  if (!args.strategy.empty()) cfg.strategies = {args.strategy};
  if (!args.out.empty()) cfg.out = args.out;
  if (args.workers > 0) cfg.workers = args.workers;
  if (args.absolute_thresholds) cfg.coverage.absolute = true;
  cfg.dataset.scene = cfg.scene;
  cfg.dataset.recon = cfg.recon;
  return cfg;
}

int cmd_scene_gen(const CommonArgs& args) {
  ExperimentConfig cfg = make_config(args);
  uint64_t seed = args.seed_set ? args.seed : cfg.seeds.front();
  SceneBundle bundle = bundle_for_seed(cfg, seed);
  std::string dir = cfg.out.empty() ? "scene" : cfg.out;
  save_scene_dir(bundle, dir);
  std::printf("scene written to %s (%zu pool views, %zu test views)\n", dir.c_str(),
              bundle.train_pool.size(), bundle.test_views.size());
  return kExitOk;
}

int cmd_dataset_gen(const CommonArgs& args) {
  ExperimentConfig cfg = make_config(args);
  DatasetGenConfig dcfg = cfg.dataset;
  dcfg.workers = cfg.workers > 0 ? cfg.workers : default_workers();
  uint64_t seed = args.seed_set ? args.seed : cfg.train.seed;
  std::string dir = cfg.out.empty() ? "dataset" : cfg.out;
  DatasetManifest manifest = generate_triplets(dcfg, seed, dir);
  std::printf("dataset written to %s (%zu triplets)\n", dir.c_str(), manifest.records.size());
  return kExitOk;
}

int cmd_train_scorer(const CommonArgs& args, const std::string& dataset_dir,
                     const std::string& weights_out) {
  ExperimentConfig cfg = make_config(args);
  DatasetManifest manifest = load_manifest(dataset_dir + "/manifest.json");
  auto [train_manifest, val_manifest] = split_dataset(manifest, cfg.val_fraction, cfg.train.seed);
  auto train_set = load_triplets(train_manifest);
  auto val_set = load_triplets(val_manifest);
  std::printf("training on %zu triplets, validating on %zu\n", train_set.size(), val_set.size());

  TrainConfig tc = cfg.train;
  tc.workers = cfg.workers > 0 ? cfg.workers : default_workers();
  TrainResult result = train_scorer(train_set, cfg.scorer, tc);
  for (const auto& e : result.log) std::printf("step %6d  loss %.6f\n", e.step, e.loss);

  std::vector<double> pred, truth;
  for (const auto& s : val_set) {
    std::vector<const ImageF*> refs;
    for (const auto& r : s.refs) refs.push_back(r.get());
    pred.push_back(predict_quality(result.model, *s.query, refs));
    double t = 0.0;
    for (float v : s.target->data) t += v;
    truth.push_back(t / static_cast<double>(s.target->data.size()));
  }
  if (pred.size() >= 2) {
    std::printf("validation pearson %.4f  spearman %.4f\n", pearson(pred, truth),
                spearman(pred, truth));
  }
  std::string out_path = weights_out.empty() ? "scorer.avst" : weights_out;
  save_scorer(result.model, out_path, tc.seed, dataset_hash(manifest));
  std::printf("weights written to %s\n", out_path.c_str());
  return kExitOk;
}

int cmd_run(const CommonArgs& args) {
  ExperimentConfig cfg = make_config(args);
  run_grid(cfg);
  std::printf("grid complete: %zu strategies x %zu seeds -> %s\n", cfg.strategies.size(),
              cfg.seeds.size(), cfg.out.c_str());
  return kExitOk;
}

int cmd_report(const CommonArgs& args, const std::string& run_dir) {
  ExperimentConfig cfg = make_config(args);
  std::string dir = run_dir.empty() ? cfg.out : run_dir;
  write_csv_report(cfg, dir, dir + "/results.csv", dir + "/summary.csv");
  std::printf("wrote %s/results.csv and %s/summary.csv\n", dir.c_str(), dir.c_str());
  return kExitOk;
}

int cmd_plot(const CommonArgs& args, const std::string& run_dir) {
  ExperimentConfig cfg = make_config(args);
  std::string dir = run_dir.empty() ? cfg.out : run_dir;
  write_svg_plots(cfg, dir, dir + "/plot");
  std::printf("wrote %s/plot_views_psnr.svg and %s/plot_time_psnr.svg\n", dir.c_str(),
              dir.c_str());
  return kExitOk;
}

int cmd_bench(const CommonArgs& args, std::vector<int> splat_counts) {
  ExperimentConfig cfg = make_config(args);
  if (splat_counts.empty()) splat_counts = {500, 2000, 5000};
  auto rows = run_bench(cfg, splat_counts);
  std::printf("n_splats  render_ms  score_ms\n");
  for (const auto& r : rows)
    std::printf("%8d  %9.3f  %8.3f\n", r.n_splats, r.render_ms, r.score_ms);
  std::string dir = cfg.out.empty() ? "." : cfg.out;
  fs::create_directories(dir);
  write_bench_csv(rows, dir + "/bench.csv");
  std::printf("wrote %s/bench.csv\n", dir.c_str());
  return kExitOk;
}

int cmd_eval_coverage(const CommonArgs& args, const std::string& reference_path,
                      const std::string& subset_path, const std::string& heatmap_path,
                      bool with_depth) {
  ExperimentConfig cfg = make_config(args);
  GaussianCloud reference = load_cloud(reference_path);
  GaussianCloud subset = load_cloud(subset_path);
  PointCloud ref_pts = cloud_to_points(reference, cfg.coverage.opacity_min);
  PointCloud sub_pts = cloud_to_points(subset, cfg.coverage.opacity_min);
  CoverageReport report = coverage_report(ref_pts, sub_pts, cfg.coverage.scr_tau_rel,
                                          cfg.coverage.f_thresholds, cfg.coverage.absolute);
  if (with_depth) {
    DepthMaeConfig dm;
    dm.n_poses = cfg.coverage.n_poses;
    dm.seed = args.seed_set ? args.seed : 0;
    dm.radius = cfg.scene.rig_radius;
    dm.intrinsics = cfg.scene.intrinsics;
    report.depth_mae = depth_mae(reference, subset, dm);
  }
  nlohmann::json j;
  j["scr_percent"] = report.scr_percent;
  j["fscore_mean"] = report.fscore_mean;
  j["fscore_per_threshold"] = report.fscore_per_threshold;
  j["thresholds"] = report.thresholds;
  j["absolute_thresholds"] = report.absolute_thresholds;
  if (report.depth_mae >= 0.0) j["depth_mae"] = report.depth_mae;
  std::cout << j.dump(2) << "\n";
  if (!heatmap_path.empty()) {
    auto d = nn_distances(ref_pts, sub_pts);
    save_nn_heatmap(ref_pts, d, heatmap_path);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"active view selection laboratory"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "JSON config file");
    sub->add_option("--seed", args.seed, "override seed list with a single seed")
        ->each([&](const std::string&) { args.seed_set = true; });
    sub->add_option("--strategy", args.strategy, "restrict to one strategy");
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--workers", args.workers, "worker threads (AVS_WORKERS also honored)");
    sub->add_flag("--absolute-thresholds", args.absolute_thresholds,
                  "treat coverage thresholds as absolute scene units");
  };

  auto* scene_gen = app.add_subcommand("scene-gen", "generate a scene bundle on disk");
  add_common(scene_gen);

  auto* dataset_gen = app.add_subcommand("dataset-gen", "generate the triplet corpus");
  add_common(dataset_gen);

  std::string dataset_dir = "dataset", weights_out;
  auto* train_cmd = app.add_subcommand("train-scorer", "train the cross-reference scorer");
  add_common(train_cmd);
  train_cmd->add_option("--dataset", dataset_dir, "dataset directory with manifest.json");
  train_cmd->add_option("--weights-out", weights_out, "output weights path");

  auto* run_cmd = app.add_subcommand("run", "run the strategy x seed benchmark grid");
  add_common(run_cmd);

  std::string run_dir;
  auto* report_cmd = app.add_subcommand("report", "aggregate run reports to CSV");
  add_common(report_cmd);
  report_cmd->add_option("--run-dir", run_dir, "directory with run reports");

  auto* plot_cmd = app.add_subcommand("plot", "emit SVG charts from run reports");
  add_common(plot_cmd);
  plot_cmd->add_option("--run-dir", run_dir, "directory with run reports");

  std::vector<int> splat_counts;
  auto* bench_cmd = app.add_subcommand("bench", "render vs scoring time across splat counts");
  add_common(bench_cmd);
  bench_cmd->add_option("--splats", splat_counts, "splat counts to sweep");

  std::string ref_path, sub_path, heatmap_path;
  bool with_depth = false;
  auto* cov_cmd = app.add_subcommand("eval-coverage", "coverage metrics between two clouds");
  add_common(cov_cmd);
  cov_cmd->add_option("--reference", ref_path, "reference cloud (.avst)")->required();
  cov_cmd->add_option("--subset", sub_path, "subset cloud (.avst)")->required();
  cov_cmd->add_option("--heatmap", heatmap_path, "write x y z d heatmap text");
  cov_cmd->add_flag("--depth", with_depth, "also compute depth MAE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (scene_gen->parsed()) return cmd_scene_gen(args);
    if (dataset_gen->parsed()) return cmd_dataset_gen(args);
    if (train_cmd->parsed()) return cmd_train_scorer(args, dataset_dir, weights_out);
    if (run_cmd->parsed()) return cmd_run(args);
    if (report_cmd->parsed()) return cmd_report(args, run_dir);
    if (plot_cmd->parsed()) return cmd_plot(args, run_dir);
    if (bench_cmd->parsed()) return cmd_bench(args, splat_counts);
    if (cov_cmd->parsed())
      return cmd_eval_coverage(args, ref_path, sub_path, heatmap_path, with_depth);
  } catch (const MissingDataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissingData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}
