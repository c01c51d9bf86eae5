#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "avs/camera.hpp"
#include "avs/image.hpp"
#include "avs/rng.hpp"

namespace avs {

struct ScorerConfig {
  int image_side = 64;
  int patch = 8;
  int dim = 64;
  int heads = 4;
  int blocks = 2;
  int ffn_dim = 128;
  int k_refs = 5;

  int tokens_per_image() const {
    int g = image_side / patch;
    return g * g;
  }
  bool operator==(const ScorerConfig&) const = default;
};

struct ParamEntry {
  std::string name;
  std::vector<uint32_t> dims;
  size_t offset = 0;
  size_t count = 0;
};

// Cross-reference SSIM-map regressor: patch-embedded query tokens (with
// sinusoidal positions) run through pre-norm decoder blocks that self-attend,
// cross-attend into patch-embedded reference tokens, then an MLP head emits
// per-patch sigmoid scores. All weights live in one flat float vector.
struct ScorerModel {
  ScorerConfig config;
  std::vector<float> params;
  std::vector<ParamEntry> layout;

  const ParamEntry& entry(const std::string& name) const;
};

ScorerModel init_scorer(const ScorerConfig& config, uint64_t seed);

// Forward pass at the precision of T (float for training/serving, double
// for finite-difference verification).
template <typename T>
struct ScorerTape;  // opaque activation cache

template <typename T>
ImageF scorer_forward(const ScorerModel& model, const ImageF& query,
                      const std::vector<const ImageF*>& refs,
                      std::shared_ptr<ScorerTape<T>>* tape_out = nullptr);

// MSE-to-target gradient for every parameter, matching params layout.
// upstream is dLoss/dmap over the predicted map's pixels.
template <typename T>
std::vector<T> scorer_backward(const ScorerModel& model, const ScorerTape<T>& tape,
                               const std::vector<float>& upstream);

// The predicted map at the tape's precision (the ImageF return value is
// float-quantized; difference quotients need this exact version).
template <typename T>
const std::vector<T>& scorer_map(const ScorerTape<T>& tape);

double predict_quality(const ScorerModel& model, const ImageF& query,
                       const std::vector<const ImageF*>& refs);

// The k reference views closest to `pose` by camera position, excluding any
// view sharing its id; ties broken by id.
std::vector<const CameraView*> select_refs(const CameraView& pose,
                                           const std::vector<const CameraView*>& available,
                                           int k);

// Resize (short side to the scorer side) + center crop; identity for square
// inputs at the model's resolution.
ImageF scorer_prepare_input(const ImageF& img, int image_side);

struct TripletSample {
  std::shared_ptr<const ImageF> query;
  std::vector<std::shared_ptr<const ImageF>> refs;
  std::shared_ptr<const ImageF> target;  // SSIM map clamped to [0,1]
  int scene_id = 0;
  int iteration = 0;
};

struct TrainConfig {
  int steps = 5000;
  int batch_size = 8;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  int log_every = 100;
  int workers = 1;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  ScorerModel model;
  std::vector<TrainLogEntry> log;
};

TrainResult train_scorer(const std::vector<TripletSample>& dataset, const ScorerConfig& config,
                         const TrainConfig& train);

void save_scorer(const ScorerModel& model, const std::string& path, uint64_t training_seed = 0,
                 uint64_t dataset_hash = 0);
ScorerModel load_scorer(const std::string& path);

extern template ImageF scorer_forward<float>(const ScorerModel&, const ImageF&,
                                             const std::vector<const ImageF*>&,
                                             std::shared_ptr<ScorerTape<float>>*);
extern template ImageF scorer_forward<double>(const ScorerModel&, const ImageF&,
                                              const std::vector<const ImageF*>&,
                                              std::shared_ptr<ScorerTape<double>>*);
extern template std::vector<float> scorer_backward<float>(const ScorerModel&,
                                                          const ScorerTape<float>&,
                                                          const std::vector<float>&);
extern template std::vector<double> scorer_backward<double>(const ScorerModel&,
                                                            const ScorerTape<double>&,
                                                            const std::vector<float>&);
extern template const std::vector<float>& scorer_map<float>(const ScorerTape<float>&);
extern template const std::vector<double>& scorer_map<double>(const ScorerTape<double>&);

}  // namespace avs
