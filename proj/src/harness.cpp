#include "avs/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "avs/parallel.hpp"

namespace fs = std::filesystem;

namespace avs {

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.dataset.scene = cfg.scene;
  cfg.dataset.recon = cfg.recon;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingDataError("config not found: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  ExperimentConfig cfg = default_experiment_config();

  if (j.contains("scene")) {
    const auto& s = j["scene"];
    cfg.scene.spec.n_splats = s.value("n_splats", cfg.scene.spec.n_splats);
    cfg.scene.spec.palette = s.value("palette", cfg.scene.spec.palette);
    if (s.contains("bounds_lo")) {
      auto lo = s["bounds_lo"].get<std::vector<double>>();
      auto hi = s["bounds_hi"].get<std::vector<double>>();
      cfg.scene.spec.bounds = Box3{{lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]}};
    }
    if (s.contains("rig")) cfg.scene.rig_kind = s["rig"] == "orbit" ? RigKind::orbit : RigKind::sphere;
    cfg.scene.rig_n = s.value("rig_n", cfg.scene.rig_n);
    cfg.scene.rig_radius = s.value("rig_radius", cfg.scene.rig_radius);
    cfg.scene.n_test = s.value("n_test", cfg.scene.n_test);
    if (s.contains("image_side")) {
      int side = s["image_side"];
      cfg.scene.intrinsics.width = side;
      cfg.scene.intrinsics.height = side;
      cfg.scene.intrinsics.cx = side / 2.0;
      cfg.scene.intrinsics.cy = side / 2.0;
      cfg.scene.intrinsics.fx = s.value("fx", static_cast<double>(side));
      cfg.scene.intrinsics.fy = cfg.scene.intrinsics.fx;
    }
  }
  if (j.contains("recon")) {
    const auto& r = j["recon"];
    cfg.recon.total_iters = r.value("total_iters", cfg.recon.total_iters);
    cfg.recon.lr_position = r.value("lr_position", cfg.recon.lr_position);
    cfg.recon.lr_scale = r.value("lr_scale", cfg.recon.lr_scale);
    cfg.recon.lr_color = r.value("lr_color", cfg.recon.lr_color);
    cfg.recon.lr_opacity = r.value("lr_opacity", cfg.recon.lr_opacity);
    cfg.recon.lambda_ssim = r.value("lambda_ssim", cfg.recon.lambda_ssim);
    cfg.recon.n_init_splats = r.value("n_init_splats", cfg.recon.n_init_splats);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    cfg.dataset.n_scenes = d.value("n_scenes", cfg.dataset.n_scenes);
    if (d.contains("snapshots")) cfg.dataset.snapshots = d["snapshots"].get<std::vector<double>>();
    cfg.dataset.views_per_scene = d.value("views_per_scene", cfg.dataset.views_per_scene);
    cfg.dataset.k_refs = d.value("k_refs", cfg.dataset.k_refs);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.steps = t.value("steps", cfg.train.steps);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.seed = t.value("seed", cfg.train.seed);
    cfg.val_fraction = t.value("val_fraction", cfg.val_fraction);
  }
  if (j.contains("scorer")) {
    const auto& s = j["scorer"];
    cfg.scorer.image_side = s.value("image_side", cfg.scorer.image_side);
    cfg.scorer.patch = s.value("patch", cfg.scorer.patch);
    cfg.scorer.dim = s.value("dim", cfg.scorer.dim);
    cfg.scorer.heads = s.value("heads", cfg.scorer.heads);
    cfg.scorer.blocks = s.value("blocks", cfg.scorer.blocks);
    cfg.scorer.ffn_dim = s.value("ffn_dim", cfg.scorer.ffn_dim);
    cfg.scorer.k_refs = s.value("k_refs", cfg.scorer.k_refs);
  }
  cfg.scorer_weights = j.value("scorer_weights", cfg.scorer_weights);
  cfg.niqe_model = j.value("niqe_model", cfg.niqe_model);
  if (j.contains("strategies")) cfg.strategies = j["strategies"].get<std::vector<std::string>>();
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<uint64_t>>();
  cfg.budget = j.value("budget", cfg.budget);
  cfg.n_initial = j.value("n_initial", cfg.n_initial);
  cfg.out = j.value("out", cfg.out);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.record_scores = j.value("record_scores", cfg.record_scores);
  cfg.zero_timings = j.value("zero_timings", cfg.zero_timings);
  if (j.contains("coverage")) {
    const auto& c = j["coverage"];
    cfg.coverage.enable = c.value("enable", cfg.coverage.enable);
    cfg.coverage.n_poses = c.value("n_poses", cfg.coverage.n_poses);
    cfg.coverage.scr_tau_rel = c.value("scr_tau_rel", cfg.coverage.scr_tau_rel);
    if (c.contains("f_thresholds"))
      cfg.coverage.f_thresholds = c["f_thresholds"].get<std::vector<double>>();
    cfg.coverage.absolute = c.value("absolute", cfg.coverage.absolute);
    cfg.coverage.opacity_min = c.value("opacity_min", cfg.coverage.opacity_min);
  }
  cfg.dataset.scene = cfg.scene;
  cfg.dataset.recon = cfg.recon;
  return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::string& path) {
  nlohmann::json j;
  j["scene"] = {{"n_splats", cfg.scene.spec.n_splats},
                {"palette", cfg.scene.spec.palette},
                {"bounds_lo", {cfg.scene.spec.bounds.lo.x, cfg.scene.spec.bounds.lo.y,
                               cfg.scene.spec.bounds.lo.z}},
                {"bounds_hi", {cfg.scene.spec.bounds.hi.x, cfg.scene.spec.bounds.hi.y,
                               cfg.scene.spec.bounds.hi.z}},
                {"rig", cfg.scene.rig_kind == RigKind::orbit ? "orbit" : "sphere"},
                {"rig_n", cfg.scene.rig_n},
                {"rig_radius", cfg.scene.rig_radius},
                {"n_test", cfg.scene.n_test},
                {"image_side", cfg.scene.intrinsics.width},
                {"fx", cfg.scene.intrinsics.fx}};
  j["recon"] = {{"total_iters", cfg.recon.total_iters},
                {"lr_position", cfg.recon.lr_position},
                {"lr_scale", cfg.recon.lr_scale},
                {"lr_color", cfg.recon.lr_color},
                {"lr_opacity", cfg.recon.lr_opacity},
                {"lambda_ssim", cfg.recon.lambda_ssim},
                {"n_init_splats", cfg.recon.n_init_splats}};
  j["dataset"] = {{"n_scenes", cfg.dataset.n_scenes},
                  {"snapshots", cfg.dataset.snapshots},
                  {"views_per_scene", cfg.dataset.views_per_scene},
                  {"k_refs", cfg.dataset.k_refs}};
  j["train"] = {{"steps", cfg.train.steps},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"weight_decay", cfg.train.weight_decay},
                {"seed", cfg.train.seed},
                {"val_fraction", cfg.val_fraction}};
  j["scorer"] = {{"image_side", cfg.scorer.image_side}, {"patch", cfg.scorer.patch},
                 {"dim", cfg.scorer.dim},               {"heads", cfg.scorer.heads},
                 {"blocks", cfg.scorer.blocks},         {"ffn_dim", cfg.scorer.ffn_dim},
                 {"k_refs", cfg.scorer.k_refs}};
  j["scorer_weights"] = cfg.scorer_weights;
  j["niqe_model"] = cfg.niqe_model;
  j["strategies"] = cfg.strategies;
  j["seeds"] = cfg.seeds;
  j["budget"] = cfg.budget;
  j["n_initial"] = cfg.n_initial;
  j["out"] = cfg.out;
  j["workers"] = cfg.workers;
  j["record_scores"] = cfg.record_scores;
  j["zero_timings"] = cfg.zero_timings;
  j["coverage"] = {{"enable", cfg.coverage.enable},
                   {"n_poses", cfg.coverage.n_poses},
                   {"scr_tau_rel", cfg.coverage.scr_tau_rel},
                   {"f_thresholds", cfg.coverage.f_thresholds},
                   {"absolute", cfg.coverage.absolute},
                   {"opacity_min", cfg.coverage.opacity_min}};
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

SceneBundle bundle_for_seed(const ExperimentConfig& cfg, uint64_t seed) {
  SceneBundleConfig scene_cfg = cfg.scene;
  scene_cfg.spec.seed = Rng::substream(seed, 0xace).next_u64();
  return make_scene_bundle(scene_cfg);
}

NIQEModel fit_niqe_from_scenes(const ExperimentConfig& cfg, uint64_t seed, int n_scenes) {
  std::vector<ImageF> pristine;
  for (int s = 0; s < n_scenes; ++s) {
    SceneBundleConfig scene_cfg = cfg.scene;
    scene_cfg.spec.seed = Rng::substream(seed, 0x419e, static_cast<uint64_t>(s)).next_u64();
    scene_cfg.n_test = 0;
    SceneBundle bundle = make_scene_bundle(scene_cfg);
    for (const auto& v : bundle.train_pool) pristine.push_back(*v.gt_image);
  }
  return niqe_fit(pristine);
}

std::string run_report_path(const std::string& out_dir, const std::string& strategy,
                            uint64_t seed) {
  return out_dir + "/run_" + strategy + "_s" + std::to_string(seed) + ".json";
}

void run_grid(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out);
  const int workers = cfg.workers > 0 ? cfg.workers : default_workers();

  std::optional<ScorerModel> crossref_model;
  std::optional<NIQEModel> niqe_model;
  for (const auto& name : cfg.strategies) {
    if (name.rfind("crossref", 0) == 0 && !crossref_model) {
      if (cfg.scorer_weights.empty())
        throw MissingDataError("crossref strategy requires scorer_weights in the config");
      crossref_model = load_scorer(cfg.scorer_weights);
    }
    if (name.rfind("niqe", 0) == 0 && !niqe_model) {
      if (!cfg.niqe_model.empty())
        niqe_model = load_niqe_model(cfg.niqe_model);
      else
        niqe_model = fit_niqe_from_scenes(cfg, 0xbead5eed);
    }
  }

  struct Cell {
    std::string strategy;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& strat : cfg.strategies)
    for (uint64_t seed : cfg.seeds) cells.push_back({strat, seed});

  parallel_for(cells.size(), workers, [&](size_t ci) {
    const Cell& cell = cells[ci];
    SceneBundle bundle = bundle_for_seed(cfg, cell.seed);
    Strategy strategy = make_strategy(cell.strategy,
                                      crossref_model ? &*crossref_model : nullptr,
                                      niqe_model ? &*niqe_model : nullptr);
    ActiveLoopConfig loop;
    loop.recon = cfg.recon;
    loop.budget = cfg.budget;
    loop.n_initial = cfg.n_initial;
    loop.seed = cell.seed;
    loop.workers = 1;  // cells run in parallel instead
    loop.record_scores = cfg.record_scores;
    loop.zero_timings = cfg.zero_timings;
    if (cfg.coverage.enable) {
      auto reference_points =
          std::make_shared<PointCloud>(cloud_to_points(bundle.gt_cloud, cfg.coverage.opacity_min));
      auto gt_cloud = std::make_shared<GaussianCloud>(bundle.gt_cloud);
      CoverageConfig cov = cfg.coverage;
      CameraIntrinsics intr = cfg.scene.intrinsics;
      double radius = cfg.scene.rig_radius;
      uint64_t seed = cell.seed;
      std::array<float, 3> bg = cfg.recon.background;
      loop.extra_metrics = [reference_points, gt_cloud, cov, intr, radius, seed,
                            bg](const GaussianCloud& cloud, MetricPoint& p) {
        PointCloud subset;
        try {
          subset = cloud_to_points(cloud, cov.opacity_min);
        } catch (const std::exception&) {
          p.scr_pct = 0.0;
          p.fscore = 0.0;
          p.depth_mae = std::numeric_limits<double>::infinity();
          return;
        }
        p.scr_pct = scr(*reference_points, subset, cov.scr_tau_rel, cov.absolute);
        p.fscore = fscore(*reference_points, subset, cov.f_thresholds, cov.absolute).mean;
        DepthMaeConfig dm;
        dm.n_poses = cov.n_poses;
        dm.seed = Rng::substream(seed, 0xde271).next_u64();
        dm.radius = radius;
        dm.intrinsics = intr;
        dm.background = bg;
        try {
          p.depth_mae = depth_mae(*gt_cloud, cloud, dm);
        } catch (const std::exception&) {
          p.depth_mae = std::numeric_limits<double>::infinity();
        }
      };
    }
    RunReport report = run_active_loop(bundle, strategy, loop);
    save_run_report(report, run_report_path(cfg.out, cell.strategy, cell.seed));
  });
}

namespace {

struct Grid {
  std::vector<std::string> strategies;
  std::vector<uint64_t> seeds;
  std::map<std::pair<std::string, uint64_t>, RunReport> reports;
  size_t n_checkpoints = 0;
};

Grid load_grid(const ExperimentConfig& cfg, const std::string& run_dir) {
  Grid grid;
  grid.strategies = cfg.strategies;
  grid.seeds = cfg.seeds;
  size_t found = 0;
  for (const auto& strat : cfg.strategies)
    for (uint64_t seed : cfg.seeds) {
      std::string path = run_report_path(run_dir, strat, seed);
      if (!fs::exists(path)) continue;
      grid.reports.emplace(std::make_pair(strat, seed), load_run_report(path));
      ++found;
    }
  if (found == 0) throw MissingDataError("no run reports found in " + run_dir);
  if (found != cfg.strategies.size() * cfg.seeds.size())
    throw MissingDataError("partial grid in " + run_dir + ": found " + std::to_string(found) +
                           " of " +
                           std::to_string(cfg.strategies.size() * cfg.seeds.size()) +
                           " cells");
  grid.n_checkpoints = grid.reports.begin()->second.curve.size();
  for (const auto& [key, rep] : grid.reports)
    if (rep.curve.size() != grid.n_checkpoints)
      throw MissingDataError("inconsistent checkpoint counts across run reports");
  return grid;
}

}  // namespace

void write_csv_report(const ExperimentConfig& cfg, const std::string& run_dir,
                      const std::string& csv_path, const std::string& summary_path) {
  Grid grid = load_grid(cfg, run_dir);

  std::ofstream out(csv_path);
  if (!out) throw MissingDataError("cannot open " + csv_path);
  out << "strategy,seed,views,psnr_db,ssim,select_s,scr_pct,fscore,depth_mae\n";
  for (const auto& strat : grid.strategies)
    for (uint64_t seed : grid.seeds) {
      const RunReport& rep = grid.reports.at({strat, seed});
      for (size_t k = 0; k < rep.curve.size(); ++k) {
        const MetricPoint& p = rep.curve[k];
        double select_s = k < rep.selections.size() ? rep.selections[k].seconds : 0.0;
        out << strat << "," << seed << "," << p.views << "," << fmt(p.psnr_db) << ","
            << fmt(p.ssim) << "," << fmt(select_s) << ",";
        if (p.scr_pct >= 0.0)
          out << fmt(p.scr_pct) << "," << fmt(p.fscore) << "," << fmt(p.depth_mae);
        else
          out << ",,";
        out << "\n";
      }
    }
  out.close();

  std::ofstream sum(summary_path);
  if (!sum) throw MissingDataError("cannot open " + summary_path);
  sum << "strategy,final_psnr_mean,final_psnr_std,final_ssim_mean,select_s_total_mean,"
         "final_scr_mean,final_fscore_mean,final_depth_mae_mean\n";
  for (const auto& strat : grid.strategies) {
    std::vector<double> psnrs, ssims, secs, scrs, fscores, dmaes;
    for (uint64_t seed : grid.seeds) {
      const RunReport& rep = grid.reports.at({strat, seed});
      const MetricPoint& p = rep.curve.back();
      psnrs.push_back(p.psnr_db);
      ssims.push_back(p.ssim);
      secs.push_back(rep.total_selection_seconds);
      if (p.scr_pct >= 0.0) {
        scrs.push_back(p.scr_pct);
        fscores.push_back(p.fscore);
        dmaes.push_back(p.depth_mae);
      }
    }
    auto mean = [](const std::vector<double>& v) {
      if (v.empty()) return std::nan("");
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    auto stdev = [&](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      double m = mean(v), s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    sum << strat << "," << fmt(mean(psnrs)) << "," << fmt(stdev(psnrs)) << ","
        << fmt(mean(ssims)) << "," << fmt(mean(secs)) << ",";
    if (!scrs.empty())
      sum << fmt(mean(scrs)) << "," << fmt(mean(fscores)) << "," << fmt(mean(dmaes));
    else
      sum << ",,";
    sum << "\n";
  }
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
  std::string label;
  std::vector<double> x, y;
};

void svg_chart(std::ofstream& out, const std::vector<Series>& series, const std::string& title,
               const std::string& x_label, const std::string& y_label) {
  const double W = 760, H = 480, ml = 70, mr = 160, mt = 50, mb = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
         "font-family=\"sans-serif\">" << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    double xv = xmin + (xmax - xmin) * t / 5.0;
    double yv = ymin + (ymax - ymin) * t / 5.0;
    out << "<text x=\"" << fmt(px(xv), "%.2f") << "\" y=\"" << H - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
        << fmt(xv, "%.4g") << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << fmt(py(yv) + 4, "%.2f")
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << fmt(yv, "%.4g") << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << fmt(py(yv), "%.2f") << "\" x2=\"" << W - mr
        << "\" y2=\"" << fmt(py(yv), "%.2f") << "\" stroke=\"#dddddd\"/>\n";
  }
  out << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 16
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << x_label
      << "</text>\n";
  out << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 18 "
      << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) out << " ";
      out << fmt(px(s.x[i]), "%.2f") << "," << fmt(py(s.y[i]), "%.2f");
    }
    out << "\"/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      out << "<circle cx=\"" << fmt(px(s.x[i]), "%.2f") << "\" cy=\"" << fmt(py(s.y[i]), "%.2f")
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    double ly = mt + 20.0 * static_cast<double>(si);
    out << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 40
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - mr + 46 << "\" y=\"" << ly + 4
        << "\" font-size=\"12\" font-family=\"sans-serif\">" << s.label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void write_svg_plots(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& out_prefix) {
  Grid grid = load_grid(cfg, run_dir);

  std::vector<Series> views_psnr, time_psnr;
  for (const auto& strat : grid.strategies) {
    Series sv{strat, {}, {}}, st{strat, {}, {}};
    for (size_t k = 0; k < grid.n_checkpoints; ++k) {
      double psnr_sum = 0.0, views = 0.0, cum_time = 0.0;
      for (uint64_t seed : grid.seeds) {
        const RunReport& rep = grid.reports.at({strat, seed});
        psnr_sum += rep.curve[k].psnr_db;
        views = rep.curve[k].views;
        double t = 0.0;
        for (size_t s = 0; s < rep.selections.size() && s <= k; ++s)
          t += rep.selections[s].seconds;
        cum_time += t;
      }
      double n = static_cast<double>(grid.seeds.size());
      sv.x.push_back(views);
      sv.y.push_back(psnr_sum / n);
      st.x.push_back(cum_time / n);
      st.y.push_back(psnr_sum / n);
    }
    views_psnr.push_back(std::move(sv));
    time_psnr.push_back(std::move(st));
  }

  std::ofstream f1(out_prefix + "_views_psnr.svg");
  if (!f1) throw MissingDataError("cannot open " + out_prefix + "_views_psnr.svg");
  svg_chart(f1, views_psnr, "Test PSNR vs training views", "training views", "PSNR (dB)");
  std::ofstream f2(out_prefix + "_time_psnr.svg");
  if (!f2) throw MissingDataError("cannot open " + out_prefix + "_time_psnr.svg");
  svg_chart(f2, time_psnr, "Test PSNR vs cumulative selection time", "selection time (s)",
            "PSNR (dB)");
}

std::vector<BenchRow> run_bench(const ExperimentConfig& cfg, const std::vector<int>& splat_counts,
                                int repeats) {
  std::vector<BenchRow> rows;
  ScorerModel model;
  if (!cfg.scorer_weights.empty() && fs::exists(cfg.scorer_weights))
    model = load_scorer(cfg.scorer_weights);
  else
    model = init_scorer(cfg.scorer, 1);

  for (int n : splat_counts) {
    SceneBundleConfig scene_cfg = cfg.scene;
    scene_cfg.spec.n_splats = n;
    scene_cfg.spec.seed = Rng::substream(0xbe9c, static_cast<uint64_t>(n)).next_u64();
    SceneBundle bundle = make_scene_bundle(scene_cfg);
    const CameraView& cand = bundle.train_pool.front();

    std::vector<const CameraView*> refs_pool;
    for (size_t i = 1; i < bundle.train_pool.size(); ++i)
      refs_pool.push_back(&bundle.train_pool[i]);
    auto nearest = select_refs(cand, refs_pool, model.config.k_refs);

    std::vector<double> render_times, score_times;
    ImageF query;
    for (int r = 0; r < repeats; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      RenderOutput out = render(bundle.gt_cloud, cand);
      auto t1 = std::chrono::steady_clock::now();
      render_times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      query = scorer_prepare_input(out.rgb, model.config.image_side);
    }
    std::vector<ImageF> prepared;
    for (const auto* v : nearest)
      prepared.push_back(scorer_prepare_input(*v->gt_image, model.config.image_side));
    std::vector<const ImageF*> refs;
    for (const auto& p : prepared) refs.push_back(&p);
    for (int r = 0; r < repeats; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      (void)predict_quality(model, query, refs);
      auto t1 = std::chrono::steady_clock::now();
      score_times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    rows.push_back({n, median_of(render_times), median_of(score_times)});
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw MissingDataError("cannot open " + path);
  out << "n_splats,render_ms,score_ms\n";
  for (const auto& r : rows)
    out << r.n_splats << "," << fmt(r.render_ms) << "," << fmt(r.score_ms) << "\n";
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::runtime_error("pearson: bad input");
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = 0.5 * (i + j);  // average rank for ties
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  return pearson(ranks(a), ranks(b));
}

}  // namespace avs
