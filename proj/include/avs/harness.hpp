#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avs/active.hpp"
#include "avs/coverage.hpp"
#include "avs/dataset.hpp"

namespace avs {

struct CoverageConfig {
  bool enable = true;
  int n_poses = 100;
  double scr_tau_rel = 0.01;
  std::vector<double> f_thresholds = {0.001, 0.01, 0.1};
  bool absolute = false;
  double opacity_min = 0.5;
};

struct ExperimentConfig {
  SceneBundleConfig scene;
  ReconConfig recon;
  DatasetGenConfig dataset;
  TrainConfig train;
  double val_fraction = 0.2;
  ScorerConfig scorer;
  std::string scorer_weights;
  std::string niqe_model;
  std::vector<std::string> strategies = {"random", "fvs", "oracle"};
  std::vector<uint64_t> seeds = {1};
  int budget = 16;
  int n_initial = 4;
  std::string out = "out";
  int workers = 0;  // 0 = default_workers()
  bool record_scores = false;
  bool zero_timings = false;
  CoverageConfig coverage;
};

ExperimentConfig default_experiment_config();
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::string& path);

// Builds the per-seed scene; scene randomness derives from the cell seed.
SceneBundle bundle_for_seed(const ExperimentConfig& cfg, uint64_t seed);

// NIQE reference statistics fitted on ground-truth renders of seeded scenes.
NIQEModel fit_niqe_from_scenes(const ExperimentConfig& cfg, uint64_t seed, int n_scenes = 2);

std::string run_report_path(const std::string& out_dir, const std::string& strategy,
                            uint64_t seed);

// Executes the strategy x seed grid; cells run in parallel up to `workers`.
void run_grid(const ExperimentConfig& cfg);

// Aggregates run reports into results.csv + summary.csv. Throws
// MissingDataError on empty or partial grids.
struct MissingDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
void write_csv_report(const ExperimentConfig& cfg, const std::string& run_dir,
                      const std::string& csv_path, const std::string& summary_path);

// Deterministic SVG line charts: views vs PSNR and cumulative selection
// seconds vs PSNR.
void write_svg_plots(const ExperimentConfig& cfg, const std::string& run_dir,
                     const std::string& out_prefix);

struct BenchRow {
  int n_splats = 0;
  double render_ms = 0.0;
  double score_ms = 0.0;
};
std::vector<BenchRow> run_bench(const ExperimentConfig& cfg, const std::vector<int>& splat_counts,
                                int repeats = 15);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::string& path);

double pearson(const std::vector<double>& a, const std::vector<double>& b);
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace avs
