#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbocc/backward_vtm.hpp"
#include "fbocc/forward_vtm.hpp"
#include "fbocc/losses.hpp"
#include "fbocc/metrics.hpp"
#include "fbocc/occ_head.hpp"
#include "fbocc/postprocess.hpp"
#include "fbocc/scene.hpp"

namespace fbocc {

struct PipelineConfig {
  DepthBinSpec bins;
  EncoderConfig encoder;
  std::size_t n_heights = 4;
  std::size_t backward_layers = 1;
  std::size_t temporal_frames = 1;  // history volumes fused before the head
  bool use_camera_mask = true;
  bool eval_free_class = false;
  double near_radius = 8.0;
  std::set<std::uint8_t> static_classes = default_static_classes();
  LossWeights loss_weights;
  int threads = 1;

  void validate() const;
  std::vector<std::size_t> eval_classes() const;
  static PipelineConfig from_json(const nlohmann::json& doc);
  static PipelineConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

struct ModelWeights {
  EncoderWeights encoder;
  BackwardLayerWeights backward;
  HeadWeights head;

  static ModelWeights random(const PipelineConfig& cfg, std::uint64_t seed);
  void save(const std::string& path) const;
  static ModelWeights load(const std::string& path, const PipelineConfig& cfg);
};

struct PipelineOptions {
  bool flip_tta = false;
  bool temporal_tta = false;
  bool oracle = false;  // replace the model output with one-hot ground truth
  std::uint64_t seed = 0;
};

struct StageTimings {
  std::vector<std::pair<std::string, double>> seconds;  // per stage, in order
  double wall_total = 0.0;

  nlohmann::json to_json() const;
};

struct PipelineResult {
  std::vector<PredictionResult> predictions;  // one per frame
  std::vector<OccupancyGrid> ground_truth;    // one per frame
  ConfusionMatrix confusion{kNumClasses};
  nlohmann::json report;
  StageTimings timings;
};

/// Full pass over every frame of the scene: render synthetic camera
/// inputs, encoder, forward splat, temporal fusion, backward
/// refinement, fusion, head, optional TTA, metrics.
PipelineResult run_pipeline(const SceneSpec& scene, const ModelWeights& weights,
                            const PipelineConfig& cfg, const PipelineOptions& opts = {});

/// Metrics report JSON with stable keys (per-class IoU by name, mIoU).
nlohmann::json metrics_report(const ConfusionMatrix& cm, std::span<const std::size_t> classes);

/// One-hot prediction from ground-truth labels.
PredictionResult one_hot_prediction(const OccupancyGrid& gt);

/// Mirrors a (C, X, Y, Z) volume's indices along x and/or y.
Tensor flip_volume_xy(const Tensor& values, bool flip_x, bool flip_y);

/// Inputs of one TTA branch: cameras mirrored for the requested 3D
/// flips (grid assumed horizontally symmetric) and images flipped to
/// stay consistent; `unflip_encoder_outputs` realizes the image-h-flip
/// factor around the encoder.
struct BranchInputs {
  std::vector<CameraModel> rig;
  std::vector<Tensor> images;
  bool unflip_encoder_outputs = false;
};
BranchInputs apply_flips(std::span<const CameraModel> rig, std::span<const Tensor> images,
                         const FlipCombo& combo);

}  // namespace fbocc
