#pragma once

#include <string>
#include <utility>
#include <vector>

#include "avs/recon.hpp"
#include "avs/scene.hpp"
#include "avs/scorer.hpp"

namespace avs {

struct TripletPaths {
  std::string query;
  std::vector<std::string> refs;
  std::string target;
  int scene_id = 0;
  int iteration = 0;
};

struct DatasetManifest {
  int schema_version = 1;
  uint64_t config_hash = 0;
  std::vector<TripletPaths> records;
  std::string root;  // directory the relative paths resolve against
};

struct DatasetGenConfig {
  int n_scenes = 24;
  std::vector<double> snapshots = {0.05, 0.15, 0.4, 1.0};  // fractions of total_iters
  int views_per_scene = 8;
  int k_refs = 5;
  SceneBundleConfig scene;
  ReconConfig recon;
  int workers = 1;
};

// Fits a reconstruction per scene and snapshots (render, references, SSIM
// map) triplets for every training view; early snapshots contribute the
// low-quality samples, late ones the high-quality samples.
DatasetManifest generate_triplets(const DatasetGenConfig& cfg, uint64_t seed,
                                  const std::string& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Scene-level split: validation scenes are never seen in training.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double val_fraction, uint64_t seed);

std::vector<TripletSample> load_triplets(const DatasetManifest& manifest);

uint64_t dataset_hash(const DatasetManifest& manifest);

}  // namespace avs
