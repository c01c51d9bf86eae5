#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avs/iqa.hpp"
#include "avs/recon.hpp"
#include "avs/scene.hpp"
#include "avs/scorer.hpp"

namespace avs {

enum class StrategyKind { random, fvs, greedy, greedy_batched };
enum class ScorerKind { oracle_ssim, crossref, niqe, uniform_random };

struct Strategy {
  StrategyKind kind = StrategyKind::greedy;
  ScorerKind scorer = ScorerKind::oracle_ssim;
  int batch = 1;
  const ScorerModel* crossref_model = nullptr;
  const NIQEModel* niqe_model = nullptr;

  std::string name() const;
};

Strategy make_strategy(const std::string& name, const ScorerModel* crossref = nullptr,
                       const NIQEModel* niqe = nullptr);

// Candidate pool with hidden ground truth. Scorers only ever see candidate
// poses and the current training images; the hidden capture is reachable
// through oracle_gt (benchmark upper bound) and reveal (selection commits
// the view to the training set).
class SelectionState {
 public:
  SelectionState(std::vector<CameraView> pool, const std::vector<int>& initial_ids);

  std::vector<int> pool_ids() const;
  const CameraView& pose(int id) const;  // gt stripped
  const std::vector<CameraView>& training_views() const { return training_; }
  const std::vector<int>& selected_ids() const { return selected_; }
  const std::vector<int>& initial_ids() const { return initial_; }

  const ImageF& oracle_gt(int id) const;
  void reveal(int id);

  // Test hook: perturbs hidden candidate captures in place. Non-oracle
  // scorers must be insensitive to this.
  void corrupt_hidden_gt(const std::function<void(ImageF&)>& fn);

 private:
  std::map<int, CameraView> hidden_;       // candidates, gt present but private
  std::map<int, CameraView> poses_only_;   // candidates, gt stripped
  std::vector<CameraView> training_;       // initial + revealed, gt visible
  std::vector<int> selected_;
  std::vector<int> initial_;
};

// Greedy max-min farthest viewpoint sampling over camera positions; first
// pick is the pose farthest from the centroid, ties to the lowest id.
std::vector<int> fvs_select(const std::vector<CameraView>& poses, int k);

struct CandidateScore {
  int id = 0;
  double score = 0.0;  // higher = better quality = less informative
  double seconds = 0.0;
};

struct ScoreOptions {
  std::array<float, 3> background = default_background();
  int workers = 1;
  uint64_t random_stream_seed = 0;
  int selection_round = 0;  // advances the uniform_random stream
};

std::vector<CandidateScore> score_candidates(const SelectionState& state,
                                             const GaussianCloud& cloud,
                                             const Strategy& strategy,
                                             const ScoreOptions& options);

// argmin of score with lowest-id tie-break; moves the view into training.
int next_view(SelectionState& state, const std::vector<CandidateScore>& scores);
std::vector<int> next_views_batched(SelectionState& state,
                                    const std::vector<CandidateScore>& scores, int k);

struct SelectionRecord {
  int iteration = 0;
  std::vector<int> chosen;
  double seconds = 0.0;  // sum of per-candidate scoring time
  std::vector<CandidateScore> scores;  // kept only when record_scores
};

struct MetricPoint {
  int views = 0;
  int iteration = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double scr_pct = -1.0;      // -1 when coverage evaluation is off
  double fscore = -1.0;
  double depth_mae = -1.0;
};

struct RunReport {
  std::string strategy;
  uint64_t seed = 0;
  int budget = 0;
  std::vector<int> initial_ids;
  std::vector<int> selected_ids;
  std::vector<SelectionRecord> selections;
  std::vector<MetricPoint> curve;
  double total_selection_seconds = 0.0;
  GaussianCloud final_cloud;
};

struct ActiveLoopConfig {
  ReconConfig recon;
  int budget = 16;
  int n_initial = 4;
  uint64_t seed = 0;
  int workers = 1;
  bool record_scores = false;
  bool zero_timings = false;  // deterministic reports for byte-compare runs
  // Optional per-checkpoint evaluation hook (coverage metrics etc.).
  std::function<void(const GaussianCloud&, MetricPoint&)> extra_metrics;
};

RunReport run_active_loop(const SceneBundle& bundle, const Strategy& strategy,
                          const ActiveLoopConfig& config);

void save_run_report(const RunReport& report, const std::string& path);
RunReport load_run_report(const std::string& path);

}  // namespace avs
