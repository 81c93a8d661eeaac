#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fbocc/pipeline.hpp"
#include "fbocc/scene.hpp"

using namespace fbocc;

namespace {

SceneSpec empty_scene() {
  SceneSpec scene;
  scene.grid.min_corner = Eigen::Vector3d(-4.0, -4.0, -1.0);
  scene.grid.max_corner = Eigen::Vector3d(4.0, 4.0, 1.4);
  scene.grid.voxel_size = 0.4;
  CameraModel cam;
  cam.intrinsics = Eigen::Matrix3d::Identity();
  cam.intrinsics(0, 0) = 60.0;
  cam.intrinsics(1, 1) = 60.0;
  cam.intrinsics(0, 2) = 47.5;
  cam.intrinsics(1, 2) = 23.5;
  cam.cam_to_ego.rotation.col(0) = Eigen::Vector3d(0.0, -1.0, 0.0);
  cam.cam_to_ego.rotation.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
  cam.cam_to_ego.rotation.col(2) = Eigen::Vector3d(1.0, 0.0, 0.0);
  cam.cam_to_ego.translation = Eigen::Vector3d(0.0, 0.0, 0.6);
  cam.height = 48;
  cam.width = 96;
  scene.rig.push_back(cam);
  return scene;
}

}  // namespace

TEST_CASE("rasterize_scene") {
  SUBCASE("empty scene is all free") {
    const auto scene = empty_scene();
    const auto gt = rasterize_scene(scene, scene.grid);
    for (std::uint8_t l : gt.labels) CHECK(l == kFreeClass);
  }

  SUBCASE("0.8 m cube at the origin covers exactly 2x2x2 voxels on the nuScenes grid") {
    SceneSpec scene = empty_scene();
    scene.grid = VoxelGridSpec::nuscenes_default();
    ScenePrimitive cube;
    cube.dimensions = Eigen::Vector3d(0.8, 0.8, 0.8);
    cube.class_id = 4;
    scene.primitives.push_back(cube);
    const auto gt = rasterize_scene(scene, scene.grid);

    std::size_t occupied = 0;
    for (std::uint8_t l : gt.labels) {
      if (l != kFreeClass) ++occupied;
    }
    CHECK(occupied == 8);
    // Centers (+-0.2, +-0.2, {-0.4, 0.0}): indices {99,100}^2 x {1,2}.
    for (std::size_t x : {99, 100}) {
      for (std::size_t y : {99, 100}) {
        for (std::size_t z : {1, 2}) {
          CHECK(gt.labels[gt.index(x, y, z)] == 4);
        }
      }
    }
  }

  SUBCASE("overlapping primitives: last listed wins") {
    SceneSpec scene = empty_scene();
    ScenePrimitive a;
    a.dimensions = Eigen::Vector3d(1.6, 1.6, 1.6);
    a.class_id = 4;
    ScenePrimitive b = a;
    b.class_id = 9;
    scene.primitives = {a, b};
    const auto gt = rasterize_scene(scene, scene.grid);
    for (std::uint8_t l : gt.labels) {
      if (l != kFreeClass) CHECK(l == 9);
    }
  }
}

TEST_CASE("render_view") {
  SUBCASE("camera inside an empty scene misses everywhere") {
    const auto scene = empty_scene();
    const auto gt = rasterize_scene(scene, scene.grid);
    const auto view = render_view(gt.labels, scene.grid, scene.rig[0]);
    for (double d : view.depth) CHECK(d == kDepthMiss);
    for (std::uint8_t s : view.semantic) CHECK(s == kSemanticMiss);
  }

  SUBCASE("wall 3 m ahead renders at that depth in the image center") {
    SceneSpec scene = empty_scene();
    ScenePrimitive wall;
    wall.pose = RigidTransform::translate(Eigen::Vector3d(3.2, 0.0, 0.2));
    wall.dimensions = Eigen::Vector3d(0.8, 8.0, 2.4);
    wall.class_id = 15;
    scene.primitives.push_back(wall);
    const auto gt = rasterize_scene(scene, scene.grid);
    const auto view = render_view(gt.labels, scene.grid, scene.rig[0]);
    // Wall front face at x = 2.8; camera at x = 0.
    const std::size_t center = 24 * 96 + 48;
    CHECK(view.depth[center] == doctest::Approx(2.8).epsilon(0.2));
    CHECK(view.semantic[center] == 15);
  }

  SUBCASE("rendered depth unprojects into an occupied voxel") {
    SceneSpec scene = empty_scene();
    DeterministicRng rng(12);
    for (int i = 0; i < 3; ++i) {
      ScenePrimitive box;
      box.pose = RigidTransform::yaw(rng.uniform(0.0, 3.0));
      box.pose.translation =
          Eigen::Vector3d(rng.uniform(1.5, 3.5), rng.uniform(-2.0, 2.0), rng.uniform(-0.2, 0.4));
      box.dimensions = Eigen::Vector3d(rng.uniform(0.8, 1.6), rng.uniform(0.8, 1.6), 1.2);
      box.class_id = static_cast<int>(rng.index(17));
      scene.primitives.push_back(box);
    }
    const auto gt = rasterize_scene(scene, scene.grid);
    const auto view = render_view(gt.labels, scene.grid, scene.rig[0]);
    const auto mask = visibility_mask(gt.labels, scene.grid, scene.rig);
    std::size_t hits = 0;
    std::size_t visible_hits = 0;
    for (int py = 0; py < view.height; ++py) {
      for (int px = 0; px < view.width; ++px) {
        const std::size_t pix = std::size_t(py) * 96 + std::size_t(px);
        if (view.depth[pix] == kDepthMiss) continue;
        ++hits;
        const auto p = unproject_pixel(double(px), double(py), view.depth[pix], scene.rig[0]);
        const auto idx = scene.grid.voxel_index(p);
        REQUIRE(idx.has_value());
        const std::size_t v = scene.grid.flat_index((*idx)[0], (*idx)[1], (*idx)[2]);
        CHECK(gt.labels[v] != kFreeClass);
        visible_hits += mask[v];
      }
    }
    CHECK(hits > 50);
    // Rendered surfaces are what the cameras see, so nearly all of
    // their voxels carry the visibility flag. Exact agreement is not a
    // theorem: rendering follows pixel rays while the mask follows
    // voxel-center rays, and the two diverge at grazing incidence.
    CHECK(visible_hits >= hits * 17 / 20);
  }
}

TEST_CASE("visibility_mask") {
  SUBCASE("empty scene: every in-frustum voxel is visible") {
    const auto scene = empty_scene();
    const auto gt = rasterize_scene(scene, scene.grid);
    const auto mask = visibility_mask(gt.labels, scene.grid, scene.rig);
    const auto gs = scene.grid.shape();
    for (std::size_t x = 0; x < gs[0]; ++x) {
      for (std::size_t y = 0; y < gs[1]; ++y) {
        for (std::size_t z = 0; z < gs[2]; ++z) {
          const bool in_frustum =
              project_ego_point(scene.grid.voxel_center(x, y, z), scene.rig[0]).has_value();
          CHECK(mask[scene.grid.flat_index(x, y, z)] == (in_frustum ? 1 : 0));
        }
      }
    }
  }

  SUBCASE("a voxel straight behind a wall is invisible") {
    SceneSpec scene = empty_scene();
    ScenePrimitive wall;
    wall.pose = RigidTransform::translate(Eigen::Vector3d(2.0, 0.0, 0.2));
    wall.dimensions = Eigen::Vector3d(0.4, 4.0, 2.0);
    wall.class_id = 15;
    scene.primitives.push_back(wall);
    const auto gt = rasterize_scene(scene, scene.grid);
    const auto mask = visibility_mask(gt.labels, scene.grid, scene.rig);

    // Wall face voxel: visible. Voxel behind it along the same ray: not.
    const auto front = scene.grid.voxel_index(Eigen::Vector3d(1.9, 0.1, 0.5));
    const auto behind = scene.grid.voxel_index(Eigen::Vector3d(3.3, 0.1, 0.5));
    REQUIRE(front.has_value());
    REQUIRE(behind.has_value());
    CHECK(mask[scene.grid.flat_index((*front)[0], (*front)[1], (*front)[2])] == 1);
    CHECK(mask[scene.grid.flat_index((*behind)[0], (*behind)[1], (*behind)[2])] == 0);
  }

  SUBCASE("adding a camera never removes visibility") {
    SceneSpec scene = empty_scene();
    ScenePrimitive box;
    box.pose = RigidTransform::translate(Eigen::Vector3d(2.0, 1.0, 0.2));
    box.dimensions = Eigen::Vector3d(1.2, 1.2, 1.2);
    box.class_id = 4;
    scene.primitives.push_back(box);
    const auto gt = rasterize_scene(scene, scene.grid);
    const auto one_cam = visibility_mask(gt.labels, scene.grid, scene.rig);

    auto rig = scene.rig;
    CameraModel side = rig[0];
    side.cam_to_ego.rotation.col(0) = Eigen::Vector3d(1.0, 0.0, 0.0);
    side.cam_to_ego.rotation.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
    side.cam_to_ego.rotation.col(2) = Eigen::Vector3d(0.0, 1.0, 0.0);
    rig.push_back(side);
    const auto two_cams = visibility_mask(gt.labels, scene.grid, rig);
    for (std::size_t v = 0; v < one_cam.size(); ++v) {
      CHECK(two_cams[v] >= one_cam[v]);
    }
  }
}

TEST_CASE("scene JSON round trip") {
  const auto scene = make_preset_scene("simple", 1);
  const auto parsed = SceneSpec::from_json_text(scene.to_json_text());
  CHECK(parsed.primitives.size() == scene.primitives.size());
  CHECK(parsed.rig.size() == scene.rig.size());
  CHECK(parsed.ego_trajectory.size() == scene.ego_trajectory.size());
  CHECK(parsed.grid.shape() == scene.grid.shape());
  const auto gt_a = rasterize_scene(scene, scene.grid);
  const auto gt_b = rasterize_scene(parsed, parsed.grid);
  CHECK(gt_a.labels == gt_b.labels);

  CHECK_THROWS(SceneSpec::from_json_text("{\"grid\": {}}"));
}

TEST_CASE("pipeline determinism, oracle and timings") {
  auto scene = make_preset_scene("simple", 3);
  // Shrink the image load for test speed: one camera, two frames.
  scene.rig.resize(1);
  PipelineConfig cfg;
  cfg.encoder.context_channels = 4;
  cfg.encoder.conv1_channels = 4;
  cfg.encoder.conv2_channels = 4;
  cfg.encoder.hidden_channels = 6;
  cfg.bins.num_bins = 16;
  cfg.encoder.depth_bins = 16;
  const auto weights = ModelWeights::random(cfg, 5);

  SUBCASE("identical runs produce identical reports and predictions") {
    const auto a = run_pipeline(scene, weights, cfg);
    const auto b = run_pipeline(scene, weights, cfg);
    CHECK(a.report.dump() == b.report.dump());
    REQUIRE(a.predictions.size() == b.predictions.size());
    for (std::size_t f = 0; f < a.predictions.size(); ++f) {
      CHECK(fnv1a64(a.predictions[f].probs) == fnv1a64(b.predictions[f].probs));
    }
  }

  SUBCASE("thread count does not change the result") {
    const auto a = run_pipeline(scene, weights, cfg);
    PipelineConfig cfg4 = cfg;
    cfg4.threads = 4;
    const auto b = run_pipeline(scene, weights, cfg4);
    CHECK(a.report.dump() == b.report.dump());
    for (std::size_t f = 0; f < a.predictions.size(); ++f) {
      CHECK(fnv1a64(a.predictions[f].probs) == fnv1a64(b.predictions[f].probs));
    }
  }

  SUBCASE("oracle prediction scores a perfect mIoU") {
    PipelineOptions opts;
    opts.oracle = true;
    const auto result = run_pipeline(scene, weights, cfg, opts);
    CHECK(result.report["miou"].get<double>() == 1.0);
  }

  SUBCASE("flip TTA output stays a simplex and reports stay deterministic") {
    PipelineOptions opts;
    opts.flip_tta = true;
    const auto a = run_pipeline(scene, weights, cfg, opts);
    const auto b = run_pipeline(scene, weights, cfg, opts);
    CHECK(a.report.dump() == b.report.dump());
    for (const auto& pred : a.predictions) CHECK(pred.is_simplex(1e-6));
  }

  SUBCASE("stage timings cover the wall-clock total") {
    const auto result = run_pipeline(scene, weights, cfg);
    double sum = 0.0;
    for (const auto& [name, secs] : result.timings.seconds) sum += secs;
    CHECK(sum <= result.timings.wall_total * 1.0 + 1e-6);
    CHECK(sum >= result.timings.wall_total * 0.95 - 1e-6);
  }
}

TEST_CASE("temporal pipeline options stay deterministic") {
  auto scene = make_preset_scene("simple", 4);
  scene.rig.resize(1);
  PipelineConfig cfg;
  cfg.encoder.context_channels = 4;
  cfg.encoder.conv1_channels = 4;
  cfg.encoder.conv2_channels = 4;
  cfg.encoder.hidden_channels = 6;
  cfg.bins.num_bins = 16;
  cfg.encoder.depth_bins = 16;
  cfg.temporal_frames = 1;
  const auto weights = ModelWeights::random(cfg, 6);
  PipelineOptions opts;
  opts.temporal_tta = true;
  const auto a = run_pipeline(scene, weights, cfg, opts);
  const auto b = run_pipeline(scene, weights, cfg, opts);
  CHECK(a.report.dump() == b.report.dump());
  for (const auto& pred : a.predictions) CHECK(pred.is_simplex(1e-6));
}

TEST_CASE("prediction container round trip") {
  const auto path = std::filesystem::temp_directory_path() / "fbocc_pred_test.ftc";
  PredictionResult pred;
  pred.probs = Tensor({kNumClasses, 3, 3, 2}, 1.0 / 18.0);
  write_prediction(path.string(), pred);
  const auto back = read_prediction(path.string());
  CHECK(fnv1a64(back.probs) == fnv1a64(pred.probs));
  std::filesystem::remove(path);
}

TEST_CASE("model weights container round trip with config validation") {
  const auto path = std::filesystem::temp_directory_path() / "fbocc_weights_test.ftc";
  PipelineConfig cfg;
  cfg.encoder.context_channels = 4;
  cfg.encoder.conv1_channels = 4;
  cfg.encoder.conv2_channels = 4;
  cfg.encoder.hidden_channels = 6;
  cfg.bins.num_bins = 16;
  cfg.encoder.depth_bins = 16;
  const auto w = ModelWeights::random(cfg, 777);
  w.save(path.string());
  const auto back = ModelWeights::load(path.string(), cfg);
  CHECK(fnv1a64(back.encoder.conv1_w) == fnv1a64(w.encoder.conv1_w));
  CHECK(fnv1a64(back.head.cls_w) == fnv1a64(w.head.cls_w));
  CHECK(fnv1a64(back.backward.weight) == fnv1a64(w.backward.weight));

  PipelineConfig other = cfg;
  other.encoder.context_channels = 8;
  CHECK_THROWS(ModelWeights::load(path.string(), other));
  std::filesystem::remove(path);
}
