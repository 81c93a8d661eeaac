#include "fbocc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fbocc/container.hpp"

namespace fbocc {

void PipelineConfig::validate() const {
  bins.validate();
  encoder.validate();
  loss_weights.validate();
  if (encoder.depth_bins != bins.num_bins) {
    throw std::invalid_argument("config: encoder depth bins and bin spec disagree");
  }
  if (n_heights < 1) throw std::invalid_argument("config: n_heights must be >= 1");
  if (near_radius <= 0.0) throw std::invalid_argument("config: near_radius must be > 0");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
}

std::vector<std::size_t> PipelineConfig::eval_classes() const {
  auto classes = default_eval_classes();
  if (eval_free_class) classes.push_back(kFreeClass);
  return classes;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
  PipelineConfig cfg;
  if (doc.contains("depth_bins")) {
    const auto& b = doc["depth_bins"];
    cfg.bins.num_bins = b.value("num_bins", cfg.bins.num_bins);
    cfg.bins.min_depth = b.value("min_depth", cfg.bins.min_depth);
    cfg.bins.max_depth = b.value("max_depth", cfg.bins.max_depth);
  }
  if (doc.contains("encoder")) {
    const auto& e = doc["encoder"];
    cfg.encoder.in_channels = e.value("in_channels", cfg.encoder.in_channels);
    cfg.encoder.conv1_channels = e.value("conv1_channels", cfg.encoder.conv1_channels);
    cfg.encoder.conv2_channels = e.value("conv2_channels", cfg.encoder.conv2_channels);
    cfg.encoder.hidden_channels = e.value("hidden_channels", cfg.encoder.hidden_channels);
    cfg.encoder.context_channels = e.value("context_channels", cfg.encoder.context_channels);
  }
  cfg.encoder.depth_bins = cfg.bins.num_bins;
  cfg.n_heights = doc.value("n_heights", cfg.n_heights);
  cfg.backward_layers = doc.value("backward_layers", cfg.backward_layers);
  cfg.temporal_frames = doc.value("temporal_frames", cfg.temporal_frames);
  cfg.use_camera_mask = doc.value("use_camera_mask", cfg.use_camera_mask);
  cfg.eval_free_class = doc.value("eval_free_class", cfg.eval_free_class);
  cfg.near_radius = doc.value("near_radius", cfg.near_radius);
  if (doc.contains("static_classes")) {
    cfg.static_classes.clear();
    for (const auto& c : doc["static_classes"]) {
      cfg.static_classes.insert(c.get<std::uint8_t>());
    }
  }
  if (doc.contains("loss_weights")) {
    const auto& w = doc["loss_weights"];
    cfg.loss_weights.focal = w.value("focal", 1.0);
    cfg.loss_weights.dice = w.value("dice", 1.0);
    cfg.loss_weights.scal_geo = w.value("scal_geo", 1.0);
    cfg.loss_weights.scal_sem = w.value("scal_sem", 1.0);
    cfg.loss_weights.lovasz = w.value("lovasz", 1.0);
    cfg.loss_weights.depth = w.value("depth", 1.0);
    cfg.loss_weights.semantic2d = w.value("semantic2d", 1.0);
  }
  cfg.threads = doc.value("threads", cfg.threads);
  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  return from_json(doc);
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json doc;
  doc["depth_bins"] = {{"num_bins", bins.num_bins},
                       {"min_depth", bins.min_depth},
                       {"max_depth", bins.max_depth}};
  doc["encoder"] = {{"in_channels", encoder.in_channels},
                    {"conv1_channels", encoder.conv1_channels},
                    {"conv2_channels", encoder.conv2_channels},
                    {"hidden_channels", encoder.hidden_channels},
                    {"context_channels", encoder.context_channels}};
  doc["n_heights"] = n_heights;
  doc["backward_layers"] = backward_layers;
  doc["temporal_frames"] = temporal_frames;
  doc["use_camera_mask"] = use_camera_mask;
  doc["eval_free_class"] = eval_free_class;
  doc["near_radius"] = near_radius;
  doc["static_classes"] = static_classes;
  doc["loss_weights"] = {{"focal", loss_weights.focal},
                         {"dice", loss_weights.dice},
                         {"scal_geo", loss_weights.scal_geo},
                         {"scal_sem", loss_weights.scal_sem},
                         {"lovasz", loss_weights.lovasz},
                         {"depth", loss_weights.depth},
                         {"semantic2d", loss_weights.semantic2d}};
  doc["threads"] = threads;
  return doc;
}

ModelWeights ModelWeights::random(const PipelineConfig& cfg, std::uint64_t seed) {
  DeterministicRng rng(seed);
  const std::uint64_t s_enc = rng.next_u64();
  const std::uint64_t s_back = rng.next_u64();
  const std::uint64_t s_head = rng.next_u64();
  ModelWeights w;
  w.encoder = EncoderWeights::random(cfg.encoder, s_enc);
  w.backward = BackwardLayerWeights::random(cfg.encoder.context_channels, s_back);
  w.head = HeadWeights::random(cfg.encoder.context_channels, s_head);
  return w;
}

void ModelWeights::save(const std::string& path) const {
  TensorContainer container;
  encoder.store(container);
  backward.store(container);
  head.store(container);
  container.save(path);
}

ModelWeights ModelWeights::load(const std::string& path, const PipelineConfig& cfg) {
  const auto container = TensorContainer::load(path);
  ModelWeights w;
  w.encoder = EncoderWeights::from_container(container, cfg.encoder);
  w.backward = BackwardLayerWeights::from_container(container, cfg.encoder.context_channels);
  w.head = HeadWeights::from_container(container, cfg.encoder.context_channels);
  return w;
}

nlohmann::json StageTimings::to_json() const {
  nlohmann::json stages;
  double sum = 0.0;
  for (const auto& [name, secs] : seconds) {
    stages[name] = secs;
    sum += secs;
  }
  return {{"stages", stages}, {"stage_sum_seconds", sum}, {"wall_total_seconds", wall_total}};
}

PredictionResult one_hot_prediction(const OccupancyGrid& gt) {
  PredictionResult pred;
  pred.probs = Tensor({kNumClasses, gt.shape[0], gt.shape[1], gt.shape[2]});
  const std::size_t n = gt.voxel_count();
  for (std::size_t v = 0; v < n; ++v) pred.probs[gt.labels[v] * n + v] = 1.0;
  return pred;
}

Tensor flip_volume_xy(const Tensor& values, bool flip_x, bool flip_y) {
  if (!flip_x && !flip_y) return values;
  const std::size_t c = values.dim(0), nx = values.dim(1), ny = values.dim(2), nz = values.dim(3);
  Tensor out({c, nx, ny, nz});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t sx = flip_x ? nx - 1 - x : x;
      for (std::size_t y = 0; y < ny; ++y) {
        const std::size_t sy = flip_y ? ny - 1 - y : y;
        for (std::size_t z = 0; z < nz; ++z) out(ci, x, y, z) = values(ci, sx, sy, z);
      }
    }
  }
  return out;
}

namespace {

Tensor flip_image_width(const Tensor& img) {
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, h, w});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out(ci, y, x) = img(ci, y, w - 1 - x);
    }
  }
  return out;
}

/// Mirror a camera across an ego plane (sign = per-axis +-1) while
/// keeping the rotation proper by also mirroring the camera's
/// horizontal axis; the image must be flipped in width to match.
CameraModel mirror_camera(const CameraModel& cam, const Eigen::Vector3d& sign) {
  CameraModel out = cam;
  const Eigen::Matrix3d f = sign.asDiagonal();
  Eigen::Matrix3d c = Eigen::Matrix3d::Identity();
  c(0, 0) = -1.0;  // camera-space horizontal mirror
  out.cam_to_ego.rotation = f * cam.cam_to_ego.rotation * c;
  out.cam_to_ego.translation = f * cam.cam_to_ego.translation;
  out.intrinsics(0, 2) = static_cast<double>(cam.width - 1) - cam.intrinsics(0, 2);
  return out;
}

}  // namespace

BranchInputs apply_flips(std::span<const CameraModel> rig, std::span<const Tensor> images,
                         const FlipCombo& combo) {
  BranchInputs out;
  out.rig.assign(rig.begin(), rig.end());
  out.images.assign(images.begin(), images.end());
  out.unflip_encoder_outputs = combo.image_hflip;

  int mirrors = 0;
  if (combo.flip_x) {
    for (auto& cam : out.rig) cam = mirror_camera(cam, Eigen::Vector3d(-1.0, 1.0, 1.0));
    ++mirrors;
  }
  if (combo.flip_y) {
    for (auto& cam : out.rig) cam = mirror_camera(cam, Eigen::Vector3d(1.0, -1.0, 1.0));
    ++mirrors;
  }
  const bool flip_content = ((mirrors % 2) != 0) != combo.image_hflip;
  if (flip_content) {
    for (auto& img : out.images) img = flip_image_width(img);
  }
  return out;
}

namespace {

void flip_map_width(Tensor& t) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w / 2; ++x) {
        std::swap(t(ci, y, x), t(ci, y, w - 1 - x));
      }
    }
  }
}

class StageClock {
 public:
  explicit StageClock(StageTimings& out) : out_(out), last_(std::chrono::steady_clock::now()) {}

  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    for (auto& [name, acc] : out_.seconds) {
      if (name == stage) {
        acc += secs;
        return;
      }
    }
    out_.seconds.emplace_back(stage, secs);
  }

 private:
  StageTimings& out_;
  std::chrono::steady_clock::time_point last_;
};

}  // namespace

nlohmann::json metrics_report(const ConfusionMatrix& cm, std::span<const std::size_t> classes) {
  const auto ious = iou_per_class(cm);
  nlohmann::json per_class;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(kClassNames[c]);
    if (ious[c]) {
      per_class[name] = *ious[c];
    } else {
      per_class[name] = nullptr;
    }
  }
  nlohmann::json evaluated = nlohmann::json::array();
  for (std::size_t c : classes) evaluated.push_back(std::string(kClassNames[c]));
  return {{"per_class_iou", per_class},
          {"miou", miou(ious, classes)},
          {"evaluated_classes", evaluated},
          {"evaluated_voxels", cm.total()}};
}

PipelineResult run_pipeline(const SceneSpec& scene, const ModelWeights& weights,
                            const PipelineConfig& cfg, const PipelineOptions& opts) {
  scene.validate();
  cfg.validate();
  const auto wall_start = std::chrono::steady_clock::now();

  const VoxelGridSpec& grid = scene.grid;
  const auto gs = grid.shape();
  const std::size_t frames = scene.frame_count();

  PipelineResult result;
  StageClock clock(result.timings);

  struct HistoryVolume {
    VoxelFeatureVolume volume;
    RigidTransform ego_pose;
  };
  std::vector<HistoryVolume> history_volumes;
  std::vector<TemporalRecord> history_preds;

  for (std::size_t f = 0; f < frames; ++f) {
    const RigidTransform ego_pose = scene.ego_pose(f);
    const SceneSpec frame_scene = scene.at_frame(f);

    OccupancyGrid gt = rasterize_scene(frame_scene, grid);
    gt.camera_mask = visibility_mask(gt.labels, grid, scene.rig, cfg.threads);
    const auto views = render_views(gt.labels, grid, scene.rig, cfg.threads);
    std::vector<Tensor> images;
    images.reserve(views.size());
    for (const auto& view : views) images.push_back(view_to_image(view, cfg.bins.max_depth));
    clock.mark("scene_prep");

    PredictionResult pred;
    if (opts.oracle) {
      pred = one_hot_prediction(gt);
      clock.mark("model");
    } else {
      // History aligned into the current ego frame once, then flipped
      // per TTA branch.
      VoxelFeatureVolume history_sum;
      bool has_history = false;
      const std::size_t oldest =
          history_volumes.size() > cfg.temporal_frames
              ? history_volumes.size() - cfg.temporal_frames
              : 0;
      for (std::size_t h = oldest; h < history_volumes.size(); ++h) {
        const RigidTransform prev_from_current =
            history_volumes[h].ego_pose.inverse().compose(ego_pose);
        auto aligned =
            align_voxel_features(history_volumes[h].volume, prev_from_current, grid, cfg.threads);
        if (!has_history) {
          history_sum = std::move(aligned);
          has_history = true;
        } else {
          history_sum = fuse(history_sum, aligned);
        }
      }

      VoxelFeatureVolume base_forward;
      const auto model = [&](const FlipCombo& combo) -> PredictionResult {
        const BranchInputs branch = apply_flips(scene.rig, images, combo);
        auto encoded = encode_cameras(branch.images, cfg.encoder, weights.encoder, cfg.threads);
        if (branch.unflip_encoder_outputs) {
          for (auto& enc : encoded) {
            flip_map_width(enc.features.values);
            flip_map_width(enc.depth.probs);
            flip_map_width(enc.semantics.logits);
          }
        }
        VoxelFeatureVolume forward =
            multi_camera_splat(encoded, branch.rig, cfg.bins, grid, cfg.threads);
        if (!combo.image_hflip && !combo.flip_x && !combo.flip_y) {
          base_forward = forward;
        }
        if (has_history) {
          VoxelFeatureVolume hist;
          hist.values = flip_volume_xy(history_sum.values, combo.flip_x, combo.flip_y);
          forward = fuse(forward, hist);
        }
        BevFeatureMap bev = compress_voxel_to_bev(forward);
        for (std::size_t layer = 0; layer < cfg.backward_layers; ++layer) {
          bev = backward_project(bev, encoded, branch.rig, cfg.bins, grid, weights.backward,
                                 cfg.n_heights, cfg.threads);
        }
        const VoxelFeatureVolume fused = fuse(forward, expand_bev_to_voxel(bev, gs[2]));
        return head_forward(fused, weights.head, cfg.threads);
      };

      if (opts.flip_tta) {
        pred = tta_flips(model);
      } else {
        pred = model(FlipCombo{});
      }
      if (cfg.temporal_frames > 0) {
        history_volumes.push_back({std::move(base_forward), ego_pose});
        while (history_volumes.size() > cfg.temporal_frames) {
          history_volumes.erase(history_volumes.begin());
        }
      }
      clock.mark("model");
    }

    if (opts.temporal_tta && !history_preds.empty()) {
      pred = temporal_tta(pred, history_preds, ego_pose, grid, cfg.static_classes,
                          cfg.near_radius);
    }
    const auto labels = decode(pred);
    clock.mark("postprocess");

    result.confusion += accumulate(labels, gt, cfg.use_camera_mask);
    history_preds.push_back({pred, ego_pose});
    result.predictions.push_back(std::move(pred));
    result.ground_truth.push_back(std::move(gt));
    clock.mark("metrics");
  }

  result.report = metrics_report(result.confusion, cfg.eval_classes());
  result.report["frames"] = frames;
  result.report["grid_shape"] = {gs[0], gs[1], gs[2]};
  result.report["use_camera_mask"] = cfg.use_camera_mask;
  result.report["seed"] = opts.seed;
  result.report["flip_tta"] = opts.flip_tta;
  result.report["temporal_tta"] = opts.temporal_tta;
  result.report["oracle"] = opts.oracle;
  clock.mark("report");

  result.timings.wall_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return result;
}

}  // namespace fbocc
