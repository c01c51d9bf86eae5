#include "avs/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "avs/iqa.hpp"
#include "avs/parallel.hpp"

namespace fs = std::filesystem;

namespace avs {

namespace {

uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct SceneRecords {
  std::vector<TripletPaths> records;
};

}  // namespace

DatasetManifest generate_triplets(const DatasetGenConfig& cfg, uint64_t seed,
                                  const std::string& out_dir) {
  if (cfg.n_scenes < 1) throw std::runtime_error("generate_triplets: n_scenes must be >= 1");
  for (double f : cfg.snapshots)
    if (f <= 0.0 || f > 1.0)
      throw std::runtime_error("generate_triplets: snapshot fractions must be in (0,1]");
  fs::create_directories(out_dir);

  std::vector<SceneRecords> per_scene(static_cast<size_t>(cfg.n_scenes));
  parallel_for(static_cast<size_t>(cfg.n_scenes), cfg.workers, [&](size_t si) {
    const int scene_id = static_cast<int>(si);
    SceneBundleConfig scene_cfg = cfg.scene;
    scene_cfg.spec.seed = Rng::substream(seed, 0xdc, static_cast<uint64_t>(si)).next_u64();
    scene_cfg.n_test = 0;
    SceneBundle bundle = make_scene_bundle(scene_cfg);

    // training subset: seeded draw of views_per_scene views
    std::vector<int> order(bundle.train_pool.size());
    std::iota(order.begin(), order.end(), 0);
    Rng pick_rng = Rng::substream(seed, 0xdc5e1, static_cast<uint64_t>(si));
    pick_rng.shuffle(order);
    std::vector<CameraView> train;
    for (int i = 0; i < cfg.views_per_scene && i < static_cast<int>(order.size()); ++i)
      train.push_back(bundle.train_pool[order[i]]);

    std::string scene_dir = out_dir + "/scene_" + std::to_string(scene_id);
    fs::create_directories(scene_dir);
    for (const auto& v : train)
      save_ppm(*v.gt_image, scene_dir + "/gt_" + std::to_string(v.id) + ".ppm");

    ReconConfig recon_cfg = cfg.recon;
    recon_cfg.seed = Rng::substream(seed, 0xdcf1, static_cast<uint64_t>(si)).next_u64();
    OptimState state = init_state(recon_cfg);
    Rng fit_rng = Rng::substream(seed, 0xdcf17, static_cast<uint64_t>(si));

    std::vector<int> snapshot_iters;
    for (double f : cfg.snapshots)
      snapshot_iters.push_back(std::max(
          1, static_cast<int>(std::floor(f * recon_cfg.total_iters + 0.5))));
    std::sort(snapshot_iters.begin(), snapshot_iters.end());
    snapshot_iters.erase(std::unique(snapshot_iters.begin(), snapshot_iters.end()),
                         snapshot_iters.end());

    std::vector<const CameraView*> train_ptrs;
    for (const auto& v : train) train_ptrs.push_back(&v);

    int done = 0;
    for (int snap : snapshot_iters) {
      fit(state, std::span<const CameraView>(train), recon_cfg, snap - done, fit_rng);
      done = snap;
      for (const auto& v : train) {
        RenderOutput out = render(state.cloud, v, recon_cfg.background);
        SSIMMap target = ssim_map(out.rgb, *v.gt_image);
        for (auto& t : target.values.data) t = std::clamp(t, 0.0f, 1.0f);

        std::string tag = std::to_string(snap) + "_" + std::to_string(v.id);
        std::string rel_scene = "scene_" + std::to_string(scene_id);
        save_ppm(out.rgb, scene_dir + "/query_" + tag + ".ppm");
        save_pfm(target.values, scene_dir + "/target_" + tag + ".pfm");

        TripletPaths rec;
        rec.scene_id = scene_id;
        rec.iteration = snap;
        rec.query = rel_scene + "/query_" + tag + ".ppm";
        rec.target = rel_scene + "/target_" + tag + ".pfm";
        for (const auto* ref : select_refs(v, train_ptrs, cfg.k_refs))
          rec.refs.push_back(rel_scene + "/gt_" + std::to_string(ref->id) + ".ppm");
        per_scene[si].records.push_back(std::move(rec));
      }
    }
  });

  DatasetManifest manifest;
  manifest.root = out_dir;
  for (const auto& s : per_scene)
    manifest.records.insert(manifest.records.end(), s.records.begin(), s.records.end());

  nlohmann::json jc;
  jc["n_scenes"] = cfg.n_scenes;
  jc["snapshots"] = cfg.snapshots;
  jc["views_per_scene"] = cfg.views_per_scene;
  jc["k_refs"] = cfg.k_refs;
  jc["total_iters"] = cfg.recon.total_iters;
  jc["seed"] = seed;
  manifest.config_hash = fnv1a(jc.dump());

  save_manifest(manifest, out_dir + "/manifest.json");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = manifest.schema_version;
  j["config_hash"] = manifest.config_hash;
  j["count"] = manifest.records.size();
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : manifest.records) {
    nlohmann::json jr;
    jr["query"] = r.query;
    jr["refs"] = r.refs;
    jr["target"] = r.target;
    jr["scene_id"] = r.scene_id;
    jr["iteration"] = r.iteration;
    recs.push_back(jr);
  }
  j["records"] = recs;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  DatasetManifest manifest;
  manifest.schema_version = j.at("schema_version");
  if (manifest.schema_version != 1)
    throw std::runtime_error("load_manifest: unsupported schema version");
  manifest.config_hash = j.at("config_hash");
  manifest.root = fs::path(path).parent_path().string();
  if (manifest.root.empty()) manifest.root = ".";
  for (const auto& jr : j.at("records")) {
    TripletPaths r;
    r.query = jr.at("query");
    r.refs = jr.at("refs").get<std::vector<std::string>>();
    r.target = jr.at("target");
    r.scene_id = jr.at("scene_id");
    r.iteration = jr.at("iteration");
    manifest.records.push_back(std::move(r));
  }
  if (manifest.records.size() != j.at("count").get<size_t>())
    throw std::runtime_error("load_manifest: record count mismatch");
  return manifest;
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double val_fraction, uint64_t seed) {
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw std::runtime_error("split_dataset: val_fraction must be in (0,1)");
  std::set<int> scene_set;
  for (const auto& r : manifest.records) scene_set.insert(r.scene_id);
  if (scene_set.size() < 2) throw std::runtime_error("split_dataset: need at least 2 scenes");

  std::vector<int> scenes(scene_set.begin(), scene_set.end());
  Rng rng = Rng::substream(seed, 0x5b17);
  rng.shuffle(scenes);
  size_t n_val = std::clamp<size_t>(
      static_cast<size_t>(std::floor(val_fraction * scenes.size() + 0.5)), 1,
      scenes.size() - 1);
  std::set<int> val_scenes(scenes.begin(), scenes.begin() + n_val);

  DatasetManifest train = manifest, val = manifest;
  train.records.clear();
  val.records.clear();
  for (const auto& r : manifest.records)
    (val_scenes.count(r.scene_id) ? val : train).records.push_back(r);
  return {std::move(train), std::move(val)};
}

std::vector<TripletSample> load_triplets(const DatasetManifest& manifest) {
  std::map<std::string, std::shared_ptr<const ImageF>> cache;
  auto load_shared = [&](const std::string& rel) {
    auto it = cache.find(rel);
    if (it != cache.end()) return it->second;
    std::string path = manifest.root + "/" + rel;
    std::shared_ptr<const ImageF> img;
    if (rel.size() > 4 && rel.substr(rel.size() - 4) == ".pfm")
      img = std::make_shared<const ImageF>(load_pfm(path));
    else
      img = std::make_shared<const ImageF>(load_ppm(path));
    cache.emplace(rel, img);
    return img;
  };

  std::vector<TripletSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    TripletSample s;
    s.query = load_shared(r.query);
    s.target = load_shared(r.target);
    for (const auto& ref : r.refs) s.refs.push_back(load_shared(ref));
    s.scene_id = r.scene_id;
    s.iteration = r.iteration;
    samples.push_back(std::move(s));
  }
  return samples;
}

uint64_t dataset_hash(const DatasetManifest& manifest) {
  uint64_t h = manifest.config_hash;
  h = fnv1a(std::to_string(manifest.records.size()), h);
  for (const auto& r : manifest.records) {
    h = fnv1a(r.query, h);
    h = fnv1a(r.target, h);
  }
  return h;
}

}  // namespace avs
