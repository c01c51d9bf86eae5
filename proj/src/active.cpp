#include "avs/active.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "avs/parallel.hpp"

namespace avs {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string Strategy::name() const {
  switch (kind) {
    case StrategyKind::random: return "random";
    case StrategyKind::fvs: return "fvs";
    case StrategyKind::greedy_batched:
      break;
    case StrategyKind::greedy:
      break;
  }
  std::string scorer_name;
  switch (scorer) {
    case ScorerKind::oracle_ssim: scorer_name = "oracle"; break;
    case ScorerKind::crossref: scorer_name = "crossref"; break;
    case ScorerKind::niqe: scorer_name = "niqe"; break;
    case ScorerKind::uniform_random: scorer_name = "random"; break;
  }
  if (kind == StrategyKind::greedy_batched)
    return scorer_name + "-batch" + std::to_string(batch);
  return scorer_name;
}

Strategy make_strategy(const std::string& name, const ScorerModel* crossref,
                       const NIQEModel* niqe) {
  Strategy s;
  std::string base = name;
  int batch = 1;
  auto pos = name.find("-batch");
  if (pos != std::string::npos) {
    base = name.substr(0, pos);
    batch = std::atoi(name.c_str() + pos + 6);
    if (batch < 1) throw std::runtime_error("make_strategy: bad batch size in '" + name + "'");
  }
  if (base == "random") {
    s.kind = StrategyKind::random;
    s.scorer = ScorerKind::uniform_random;
  } else if (base == "fvs") {
    s.kind = StrategyKind::fvs;
    s.scorer = ScorerKind::uniform_random;
  } else if (base == "oracle") {
    s.kind = StrategyKind::greedy;
    s.scorer = ScorerKind::oracle_ssim;
  } else if (base == "crossref") {
    s.kind = StrategyKind::greedy;
    s.scorer = ScorerKind::crossref;
    s.crossref_model = crossref;
    if (!crossref) throw std::runtime_error("make_strategy: crossref needs a model");
  } else if (base == "niqe") {
    s.kind = StrategyKind::greedy;
    s.scorer = ScorerKind::niqe;
    s.niqe_model = niqe;
    if (!niqe) throw std::runtime_error("make_strategy: niqe needs a model");
  } else {
    throw std::runtime_error("make_strategy: unknown strategy '" + name + "'");
  }
  if (batch > 1) {
    s.kind = StrategyKind::greedy_batched;
    s.batch = batch;
  }
  return s;
}

SelectionState::SelectionState(std::vector<CameraView> pool,
                               const std::vector<int>& initial_ids) {
  for (auto& v : pool) {
    if (!v.gt_image) throw std::runtime_error("SelectionState: pool view without gt");
    poses_only_.emplace(v.id, v.without_gt());
    hidden_.emplace(v.id, std::move(v));
  }
  initial_ = initial_ids;
  for (int id : initial_ids) {
    auto it = hidden_.find(id);
    if (it == hidden_.end()) throw std::runtime_error("SelectionState: unknown initial id");
    training_.push_back(it->second);
    hidden_.erase(it);
    poses_only_.erase(id);
  }
}

std::vector<int> SelectionState::pool_ids() const {
  std::vector<int> ids;
  ids.reserve(hidden_.size());
  for (const auto& [id, v] : hidden_) ids.push_back(id);
  return ids;
}

const CameraView& SelectionState::pose(int id) const {
  auto it = poses_only_.find(id);
  if (it == poses_only_.end()) throw std::runtime_error("SelectionState: id not in pool");
  return it->second;
}

const ImageF& SelectionState::oracle_gt(int id) const {
  auto it = hidden_.find(id);
  if (it == hidden_.end()) throw std::runtime_error("SelectionState: id not in pool");
  return *it->second.gt_image;
}

void SelectionState::reveal(int id) {
  auto it = hidden_.find(id);
  if (it == hidden_.end()) throw std::runtime_error("SelectionState: id not in pool");
  training_.push_back(it->second);
  selected_.push_back(id);
  hidden_.erase(it);
  poses_only_.erase(id);
}

void SelectionState::corrupt_hidden_gt(const std::function<void(ImageF&)>& fn) {
  for (auto& [id, v] : hidden_) fn(*v.gt_image);
}

std::vector<int> fvs_select(const std::vector<CameraView>& poses, int k) {
  if (k > static_cast<int>(poses.size()))
    throw std::runtime_error("fvs_select: k exceeds pose count");
  std::vector<Vec3> pos(poses.size());
  Vec3 centroid{0, 0, 0};
  for (size_t i = 0; i < poses.size(); ++i) {
    pos[i] = poses[i].position();
    centroid = centroid + pos[i];
  }
  centroid = centroid * (1.0 / static_cast<double>(poses.size()));

  std::vector<bool> taken(poses.size(), false);
  std::vector<int> order;
  order.reserve(static_cast<size_t>(k));
  std::vector<double> min_dist(poses.size(), std::numeric_limits<double>::infinity());

  for (int round = 0; round < k; ++round) {
    int best = -1;
    double best_val = -1.0;
    for (size_t i = 0; i < poses.size(); ++i) {
      if (taken[i]) continue;
      double val = round == 0 ? (pos[i] - centroid).norm() : min_dist[i];
      if (val > best_val ||
          (val == best_val && best >= 0 && poses[i].id < poses[best].id)) {
        best_val = val;
        best = static_cast<int>(i);
      }
    }
    taken[best] = true;
    order.push_back(poses[best].id);
    for (size_t i = 0; i < poses.size(); ++i)
      if (!taken[i]) min_dist[i] = std::min(min_dist[i], (pos[i] - pos[best]).norm());
  }
  return order;
}

std::vector<CandidateScore> score_candidates(const SelectionState& state,
                                             const GaussianCloud& cloud,
                                             const Strategy& strategy,
                                             const ScoreOptions& options) {
  std::vector<int> ids = state.pool_ids();
  if (ids.empty()) throw std::runtime_error("score_candidates: empty pool");
  std::vector<CandidateScore> scores(ids.size());

  if (strategy.scorer == ScorerKind::uniform_random && strategy.kind != StrategyKind::fvs) {
    Rng rng = Rng::substream(options.random_stream_seed, 0xd1ce,
                             static_cast<uint64_t>(options.selection_round));
    for (size_t i = 0; i < ids.size(); ++i)
      scores[i] = {ids[i], rng.next_double(), 0.0};
    return scores;
  }

  if (strategy.kind == StrategyKind::fvs) {
    // Farthest viewpoint: score is the negated min-distance to the current
    // training set, so the argmin picks the farthest pose.
    for (size_t i = 0; i < ids.size(); ++i) {
      const CameraView& cand = state.pose(ids[i]);
      Vec3 p = cand.position();
      double dmin = std::numeric_limits<double>::infinity();
      for (const auto& t : state.training_views())
        dmin = std::min(dmin, (t.position() - p).norm());
      scores[i] = {ids[i], -dmin, 0.0};
    }
    return scores;
  }

  // Reference pool for the cross-reference scorer: current training images.
  std::vector<const CameraView*> training_ptrs;
  for (const auto& t : state.training_views()) training_ptrs.push_back(&t);

  parallel_for(ids.size(), options.workers, [&](size_t i) {
    const int id = ids[i];
    const CameraView& cand = state.pose(id);
    double t0 = now_seconds();
    RenderOutput out = render(cloud, cand, options.background);
    double score = 0.0;
    switch (strategy.scorer) {
      case ScorerKind::oracle_ssim:
        score = ssim_mean(out.rgb, state.oracle_gt(id));
        break;
      case ScorerKind::crossref: {
        const ScorerModel& model = *strategy.crossref_model;
        ImageF query = scorer_prepare_input(out.rgb, model.config.image_side);
        auto nearest = select_refs(cand, training_ptrs, model.config.k_refs);
        std::vector<ImageF> prepared;
        prepared.reserve(nearest.size());
        for (const auto* v : nearest)
          prepared.push_back(scorer_prepare_input(*v->gt_image, model.config.image_side));
        std::vector<const ImageF*> refs;
        for (const auto& p : prepared) refs.push_back(&p);
        score = predict_quality(model, query, refs);
        break;
      }
      case ScorerKind::niqe:
        score = -niqe_score(out.rgb, *strategy.niqe_model);
        break;
      case ScorerKind::uniform_random:
        break;
    }
    scores[i] = {id, score, now_seconds() - t0};
  });
  return scores;
}

int next_view(SelectionState& state, const std::vector<CandidateScore>& scores) {
  if (scores.empty()) throw std::runtime_error("next_view: empty scores");
  const CandidateScore* best = &scores[0];
  for (const auto& s : scores)
    if (s.score < best->score || (s.score == best->score && s.id < best->id)) best = &s;
  state.reveal(best->id);
  return best->id;
}

std::vector<int> next_views_batched(SelectionState& state,
                                    const std::vector<CandidateScore>& scores, int k) {
  if (k > static_cast<int>(scores.size()))
    throw std::runtime_error("next_views_batched: k exceeds pool size");
  std::vector<CandidateScore> sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const CandidateScore& a, const CandidateScore& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });
  std::vector<int> chosen;
  for (int i = 0; i < k; ++i) {
    state.reveal(sorted[i].id);
    chosen.push_back(sorted[i].id);
  }
  return chosen;
}

RunReport run_active_loop(const SceneBundle& bundle, const Strategy& strategy,
                          const ActiveLoopConfig& config) {
  if (config.budget > static_cast<int>(bundle.train_pool.size()) - config.n_initial)
    throw std::runtime_error("run_active_loop: budget exceeds pool size");

  RunReport report;
  report.strategy = strategy.name();
  report.seed = config.seed;
  report.budget = config.budget;

  std::vector<int> initial = fvs_select(bundle.train_pool, config.n_initial);
  SelectionState state(bundle.train_pool, initial);
  report.initial_ids = initial;

  ReconConfig recon_cfg = config.recon;
  recon_cfg.seed = Rng::substream(config.seed, 0xf17).next_u64();
  OptimState optim = init_state(recon_cfg);
  Rng fit_rng = Rng::substream(config.seed, 0xf17b);

  const int per_round = strategy.kind == StrategyKind::greedy_batched ? strategy.batch : 1;
  const int rounds = (config.budget + per_round - 1) / per_round;
  std::vector<int> schedule = schedule_points(recon_cfg.total_iters);
  if (static_cast<int>(schedule.size()) < rounds)
    throw std::runtime_error("run_active_loop: schedule has too few checkpoints for budget");

  auto evaluate = [&](int iteration) {
    MetricPoint p;
    p.views = static_cast<int>(state.training_views().size());
    p.iteration = iteration;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& tv : bundle.test_views) {
      RenderOutput out = render(optim.cloud, tv, recon_cfg.background);
      psnr_sum += psnr(out.rgb, *tv.gt_image);
      ssim_sum += ssim_mean(out.rgb, *tv.gt_image);
    }
    p.psnr_db = psnr_sum / static_cast<double>(bundle.test_views.size());
    p.ssim = ssim_sum / static_cast<double>(bundle.test_views.size());
    if (config.extra_metrics) config.extra_metrics(optim.cloud, p);
    report.curve.push_back(p);
  };

  int done_iters = 0;
  int selected = 0;
  for (int round = 0; round < rounds; ++round) {
    int target_iter = schedule[round];
    fit(optim, std::span<const CameraView>(state.training_views()), recon_cfg,
        target_iter - done_iters, fit_rng);
    done_iters = target_iter;

    ScoreOptions opts;
    opts.background = recon_cfg.background;
    opts.workers = config.workers;
    opts.random_stream_seed = config.seed;
    opts.selection_round = round;
    auto scores = score_candidates(state, optim.cloud, strategy, opts);

    SelectionRecord rec;
    rec.iteration = target_iter;
    int take = std::min(per_round, config.budget - selected);
    if (take == 1) {
      rec.chosen = {next_view(state, scores)};
    } else {
      rec.chosen = next_views_batched(state, scores, take);
    }
    selected += take;
    for (const auto& s : scores) rec.seconds += s.seconds;
    if (config.zero_timings) rec.seconds = 0.0;
    if (config.record_scores) {
      rec.scores = scores;
      if (config.zero_timings)
        for (auto& s : rec.scores) s.seconds = 0.0;
    }
    report.total_selection_seconds += rec.seconds;
    for (int id : rec.chosen) report.selected_ids.push_back(id);
    report.selections.push_back(std::move(rec));

    evaluate(target_iter);
  }

  if (done_iters < recon_cfg.total_iters) {
    fit(optim, std::span<const CameraView>(state.training_views()), recon_cfg,
        recon_cfg.total_iters - done_iters, fit_rng);
    done_iters = recon_cfg.total_iters;
  }
  evaluate(done_iters);

  report.final_cloud = optim.cloud;
  return report;
}

namespace {

nlohmann::json metric_to_json(const MetricPoint& p) {
  nlohmann::json j;
  j["views"] = p.views;
  j["iteration"] = p.iteration;
  if (std::isfinite(p.psnr_db))
    j["psnr_db"] = p.psnr_db;
  else
    j["psnr_db"] = "inf";
  j["ssim"] = p.ssim;
  if (p.scr_pct >= 0.0) {
    j["scr_pct"] = p.scr_pct;
    j["fscore"] = p.fscore;
    j["depth_mae"] = p.depth_mae;
  }
  return j;
}

MetricPoint metric_from_json(const nlohmann::json& j) {
  MetricPoint p;
  p.views = j.at("views");
  p.iteration = j.at("iteration");
  if (j.at("psnr_db").is_string())
    p.psnr_db = std::numeric_limits<double>::infinity();
  else
    p.psnr_db = j.at("psnr_db");
  p.ssim = j.at("ssim");
  p.scr_pct = j.value("scr_pct", -1.0);
  p.fscore = j.value("fscore", -1.0);
  p.depth_mae = j.value("depth_mae", -1.0);
  return p;
}

}  // namespace

void save_run_report(const RunReport& report, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["strategy"] = report.strategy;
  j["seed"] = report.seed;
  j["budget"] = report.budget;
  j["initial_ids"] = report.initial_ids;
  j["selected_ids"] = report.selected_ids;
  j["total_selection_seconds"] = report.total_selection_seconds;
  nlohmann::json sel = nlohmann::json::array();
  for (const auto& r : report.selections) {
    nlohmann::json jr;
    jr["iteration"] = r.iteration;
    jr["chosen"] = r.chosen;
    jr["seconds"] = r.seconds;
    if (!r.scores.empty()) {
      nlohmann::json js = nlohmann::json::array();
      for (const auto& s : r.scores)
        js.push_back({{"id", s.id}, {"score", s.score}, {"seconds", s.seconds}});
      jr["scores"] = js;
    }
    sel.push_back(jr);
  }
  j["selections"] = sel;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : report.curve) curve.push_back(metric_to_json(p));
  j["curve"] = curve;

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_run_report: cannot open " + path);
  out << j.dump(2) << "\n";
  save_cloud(report.final_cloud, path + ".cloud.avst");
}

RunReport load_run_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_run_report: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunReport report;
  report.strategy = j.at("strategy");
  report.seed = j.at("seed");
  report.budget = j.at("budget");
  report.initial_ids = j.at("initial_ids").get<std::vector<int>>();
  report.selected_ids = j.at("selected_ids").get<std::vector<int>>();
  report.total_selection_seconds = j.at("total_selection_seconds");
  for (const auto& jr : j.at("selections")) {
    SelectionRecord r;
    r.iteration = jr.at("iteration");
    r.chosen = jr.at("chosen").get<std::vector<int>>();
    r.seconds = jr.at("seconds");
    if (jr.contains("scores"))
      for (const auto& js : jr.at("scores"))
        r.scores.push_back({js.at("id"), js.at("score"), js.at("seconds")});
    report.selections.push_back(std::move(r));
  }
  for (const auto& jp : j.at("curve")) report.curve.push_back(metric_from_json(jp));
  std::ifstream cloud_in(path + ".cloud.avst");
  if (cloud_in.good()) {
    cloud_in.close();
    report.final_cloud = load_cloud(path + ".cloud.avst");
  }
  return report;
}

}  // namespace avs
