#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "avs/dataset.hpp"
#include "avs/iqa.hpp"

using namespace avs;
namespace fs = std::filesystem;

namespace {

DatasetGenConfig small_config() {
  DatasetGenConfig cfg;
  cfg.n_scenes = 2;
  cfg.snapshots = {0.1, 1.0};
  cfg.views_per_scene = 4;
  cfg.k_refs = 3;
  cfg.scene.rig_n = 12;
  cfg.scene.n_test = 0;
  cfg.scene.spec.n_splats = 60;
  cfg.recon.total_iters = 200;
  cfg.recon.n_init_splats = 80;
  cfg.workers = 2;
  return cfg;
}

}  // namespace

TEST_CASE("generate_triplets produces the expected record grid") {
  fs::remove_all("test_ds");
  DatasetGenConfig cfg = small_config();
  DatasetManifest m = generate_triplets(cfg, 5, "test_ds");
  CHECK(m.records.size() == 2u * 2u * 4u);  // scenes x snapshots x views

  std::set<int> scenes;
  for (const auto& r : m.records) {
    scenes.insert(r.scene_id);
    CHECK(fs::exists("test_ds/" + r.query));
    CHECK(fs::exists("test_ds/" + r.target));
    for (const auto& ref : r.refs) CHECK(fs::exists("test_ds/" + ref));
    CHECK(r.refs.size() == 3);
    // a record's own ground truth never appears among its references
    std::string view_id = r.query.substr(r.query.rfind('_') + 1);
    view_id = view_id.substr(0, view_id.size() - 4);
    for (const auto& ref : r.refs)
      CHECK(ref.find("gt_" + view_id + ".ppm") == std::string::npos);
  }
  CHECK(scenes.size() == 2);
}

TEST_CASE("triplet targets are clamped SSIM maps and improve with training") {
  DatasetManifest m = load_manifest("test_ds/manifest.json");
  REQUIRE_FALSE(m.records.empty());
  double early_sum = 0, late_sum = 0;
  int early_n = 0, late_n = 0;
  for (const auto& r : m.records) {
    ImageF target = load_pfm(m.root + "/" + r.target);
    double mean = 0;
    for (float v : target.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
      mean += v;
    }
    mean /= static_cast<double>(target.data.size());
    if (r.iteration <= 20) {
      early_sum += mean;
      ++early_n;
    } else {
      late_sum += mean;
      ++late_n;
    }
  }
  REQUIRE(early_n > 0);
  REQUIRE(late_n > 0);
  CHECK(late_sum / late_n > early_sum / early_n);
}

TEST_CASE("regeneration with the same seed is byte-identical") {
  DatasetGenConfig cfg = small_config();
  fs::remove_all("test_ds_a");
  fs::remove_all("test_ds_b");
  generate_triplets(cfg, 9, "test_ds_a");
  generate_triplets(cfg, 9, "test_ds_b");
  for (const auto& entry : fs::recursive_directory_iterator("test_ds_a")) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), "test_ds_a");
    std::ifstream a(entry.path(), std::ios::binary);
    std::ifstream b(fs::path("test_ds_b") / rel, std::ios::binary);
    REQUIRE(b.good());
    std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
  }
}

TEST_CASE("manifest round-trips") {
  DatasetManifest m = load_manifest("test_ds/manifest.json");
  save_manifest(m, "test_ds/manifest2.json");
  DatasetManifest back = load_manifest("test_ds/manifest2.json");
  CHECK(back.records.size() == m.records.size());
  CHECK(back.config_hash == m.config_hash);
  for (size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].query == m.records[i].query);
    CHECK(back.records[i].scene_id == m.records[i].scene_id);
  }
}

TEST_CASE("split_dataset separates scenes, not records") {
  DatasetManifest m;
  m.root = ".";
  for (int scene = 0; scene < 10; ++scene)
    for (int rec = 0; rec < 4; ++rec) {
      TripletPaths r;
      r.scene_id = scene;
      r.query = "q" + std::to_string(scene) + "_" + std::to_string(rec);
      m.records.push_back(r);
    }
  auto [train, val] = split_dataset(m, 0.2, 3);
  std::set<int> train_scenes, val_scenes;
  for (const auto& r : train.records) train_scenes.insert(r.scene_id);
  for (const auto& r : val.records) val_scenes.insert(r.scene_id);
  CHECK(train_scenes.size() == 8);
  CHECK(val_scenes.size() == 2);
  for (int s : val_scenes) CHECK(train_scenes.count(s) == 0);
  CHECK(train.records.size() + val.records.size() == m.records.size());

  auto [train2, val2] = split_dataset(m, 0.2, 3);
  CHECK(train2.records.size() == train.records.size());
  for (size_t i = 0; i < train.records.size(); ++i)
    CHECK(train2.records[i].query == train.records[i].query);

  DatasetManifest one;
  one.records.push_back(TripletPaths{});
  CHECK_THROWS(split_dataset(one, 0.2, 1));
}

TEST_CASE("load_triplets shares reference storage") {
  DatasetManifest m = load_manifest("test_ds/manifest.json");
  auto samples = load_triplets(m);
  REQUIRE(samples.size() == m.records.size());
  // the same gt file loaded once: any two samples citing it share the pointer
  std::map<std::string, const ImageF*> seen;
  for (size_t i = 0; i < samples.size(); ++i) {
    for (size_t k = 0; k < m.records[i].refs.size(); ++k) {
      auto it = seen.find(m.records[i].refs[k]);
      if (it == seen.end())
        seen.emplace(m.records[i].refs[k], samples[i].refs[k].get());
      else
        CHECK(it->second == samples[i].refs[k].get());
    }
  }
}
