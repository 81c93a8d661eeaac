#include "fbocc/scene.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fbocc/container.hpp"

namespace fbocc {

bool ScenePrimitive::contains(const Eigen::Vector3d& world_point) const {
  const Eigen::Vector3d q = pose.inverse().apply(world_point);
  if (kind == Kind::kGroundPlane) {
    return q.z() >= 0.0 && q.z() < dimensions.z();
  }
  // Half-open extents, matching the grid's half-open convention.
  for (int a = 0; a < 3; ++a) {
    if (q[a] < -dimensions[a] * 0.5 || q[a] >= dimensions[a] * 0.5) return false;
  }
  return true;
}

void ScenePrimitive::validate() const {
  pose.validate();
  if (!(dimensions.minCoeff() > 0.0)) {
    throw std::invalid_argument("ScenePrimitive: dimensions must be positive");
  }
  if (class_id < 0 || class_id > 16) {
    throw std::invalid_argument("ScenePrimitive: class id must be in [0,16]");
  }
}

void SceneSpec::validate() const {
  grid.validate();
  if (rig.empty()) throw std::invalid_argument("SceneSpec: need at least one camera");
  for (const auto& cam : rig) cam.validate();
  for (const auto& prim : primitives) prim.validate();
  for (const auto& pose : ego_trajectory) pose.validate();
}

RigidTransform SceneSpec::ego_pose(std::size_t frame) const {
  if (ego_trajectory.empty()) return RigidTransform::identity();
  if (frame >= ego_trajectory.size()) {
    throw std::invalid_argument("SceneSpec: frame index out of range");
  }
  return ego_trajectory[frame];
}

SceneSpec SceneSpec::at_frame(std::size_t frame) const {
  const RigidTransform world_to_ego = ego_pose(frame).inverse();
  SceneSpec out = *this;
  for (auto& prim : out.primitives) {
    prim.pose = world_to_ego.compose(prim.pose);
  }
  out.ego_trajectory = {RigidTransform::identity()};
  return out;
}

namespace {

nlohmann::json transform_to_json(const RigidTransform& t) {
  std::vector<double> r(9), tr(3);
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) r[static_cast<std::size_t>(i * 3 + c)] = t.rotation(i, c);
    tr[static_cast<std::size_t>(i)] = t.translation[i];
  }
  return {{"rotation", r}, {"translation", tr}};
}

RigidTransform transform_from_json(const nlohmann::json& j) {
  RigidTransform t;
  if (j.contains("rotation")) {
    const auto r = j.at("rotation").get<std::vector<double>>();
    if (r.size() != 9) throw std::invalid_argument("scene: rotation must have 9 entries");
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) t.rotation(i, c) = r[static_cast<std::size_t>(i * 3 + c)];
    }
  } else if (j.contains("yaw")) {
    t.rotation = RigidTransform::yaw(j.at("yaw").get<double>()).rotation;
  }
  if (j.contains("translation")) {
    const auto tr = j.at("translation").get<std::vector<double>>();
    if (tr.size() != 3) throw std::invalid_argument("scene: translation must have 3 entries");
    for (int i = 0; i < 3; ++i) t.translation[i] = tr[static_cast<std::size_t>(i)];
  }
  t.validate();
  return t;
}

}  // namespace

SceneSpec SceneSpec::from_json_text(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  SceneSpec scene;
  const auto& g = doc.at("grid");
  const auto mn = g.at("min").get<std::vector<double>>();
  const auto mx = g.at("max").get<std::vector<double>>();
  if (mn.size() != 3 || mx.size() != 3) {
    throw std::invalid_argument("scene: grid min/max must have 3 entries");
  }
  scene.grid.min_corner = Eigen::Vector3d(mn[0], mn[1], mn[2]);
  scene.grid.max_corner = Eigen::Vector3d(mx[0], mx[1], mx[2]);
  scene.grid.voxel_size = g.at("voxel_size").get<double>();

  for (const auto& j : doc.value("primitives", nlohmann::json::array())) {
    ScenePrimitive prim;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "box") {
      prim.kind = ScenePrimitive::Kind::kBox;
    } else if (kind == "ground-plane") {
      prim.kind = ScenePrimitive::Kind::kGroundPlane;
    } else {
      throw std::invalid_argument("scene: unknown primitive kind '" + kind + "'");
    }
    prim.pose = transform_from_json(j);
    const auto dims = j.at("dimensions").get<std::vector<double>>();
    if (dims.size() != 3) throw std::invalid_argument("scene: dimensions must have 3 entries");
    prim.dimensions = Eigen::Vector3d(dims[0], dims[1], dims[2]);
    prim.class_id = j.at("class_id").get<int>();
    scene.primitives.push_back(prim);
  }

  scene.rig = parse_camera_rig(doc.at("cameras").dump());
  for (const auto& j : doc.value("ego_trajectory", nlohmann::json::array())) {
    scene.ego_trajectory.push_back(transform_from_json(j));
  }
  scene.validate();
  return scene;
}

std::string SceneSpec::to_json_text() const {
  nlohmann::json doc;
  doc["grid"] = {{"min", {grid.min_corner.x(), grid.min_corner.y(), grid.min_corner.z()}},
                 {"max", {grid.max_corner.x(), grid.max_corner.y(), grid.max_corner.z()}},
                 {"voxel_size", grid.voxel_size}};
  doc["primitives"] = nlohmann::json::array();
  for (const auto& prim : primitives) {
    nlohmann::json j = transform_to_json(prim.pose);
    j["kind"] = prim.kind == ScenePrimitive::Kind::kBox ? "box" : "ground-plane";
    j["dimensions"] = {prim.dimensions.x(), prim.dimensions.y(), prim.dimensions.z()};
    j["class_id"] = prim.class_id;
    doc["primitives"].push_back(j);
  }
  doc["cameras"] = nlohmann::json::parse(camera_rig_to_json(rig));
  doc["ego_trajectory"] = nlohmann::json::array();
  for (const auto& pose : ego_trajectory) doc["ego_trajectory"].push_back(transform_to_json(pose));
  return doc.dump(2);
}

SceneSpec SceneSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scene: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

void SceneSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("scene: cannot open " + path + " for writing");
  out << to_json_text() << "\n";
}

OccupancyGrid rasterize_scene(const SceneSpec& scene, const VoxelGridSpec& grid) {
  grid.validate();
  const auto gs = grid.shape();
  OccupancyGrid out;
  out.shape = gs;
  out.labels.assign(gs[0] * gs[1] * gs[2], kFreeClass);
  out.camera_mask.assign(gs[0] * gs[1] * gs[2], 1);
  for (std::size_t x = 0; x < gs[0]; ++x) {
    for (std::size_t y = 0; y < gs[1]; ++y) {
      for (std::size_t z = 0; z < gs[2]; ++z) {
        const Eigen::Vector3d center = grid.voxel_center(x, y, z);
        // Last-listed primitive wins.
        for (std::size_t p = scene.primitives.size(); p-- > 0;) {
          if (scene.primitives[p].contains(center)) {
            out.labels[out.index(x, y, z)] =
                static_cast<std::uint8_t>(scene.primitives[p].class_id);
            break;
          }
        }
      }
    }
  }
  return out;
}

namespace {

/// Entry/exit distances of a ray against the grid box; empty when the
/// ray misses.
std::optional<std::pair<double, double>> ray_box(const Eigen::Vector3d& origin,
                                                 const Eigen::Vector3d& dir,
                                                 const VoxelGridSpec& grid) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-12) {
      if (origin[a] < grid.min_corner[a] || origin[a] >= grid.max_corner[a]) return std::nullopt;
      continue;
    }
    double lo = (grid.min_corner[a] - origin[a]) / dir[a];
    double hi = (grid.max_corner[a] - origin[a]) / dir[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  if (t1 <= t0) return std::nullopt;
  return std::make_pair(t0, t1);
}

}  // namespace

RenderedView render_view(std::span<const std::uint8_t> labels, const VoxelGridSpec& grid,
                         const CameraModel& cam, int threads) {
  cam.validate();
  grid.validate();
  RenderedView view;
  view.height = cam.height;
  view.width = cam.width;
  view.depth.assign(static_cast<std::size_t>(cam.height) * cam.width, kDepthMiss);
  view.semantic.assign(static_cast<std::size_t>(cam.height) * cam.width, kSemanticMiss);

  const Eigen::Vector3d origin = cam.center();
  const double step = grid.voxel_size * 0.5;
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t py) {
    for (int px = 0; px < cam.width; ++px) {
      // Camera-frame direction through the pixel center at unit z-depth.
      const Eigen::Vector3d probe =
          unproject_pixel(static_cast<double>(px), static_cast<double>(py), 1.0, cam);
      const Eigen::Vector3d dir_unnorm = probe - origin;
      const double norm = dir_unnorm.norm();
      const Eigen::Vector3d dir = dir_unnorm / norm;
      const auto range = ray_box(origin, dir, grid);
      if (!range) continue;
      const double t_enter = std::max(range->first, 0.0);
      for (double t = t_enter; t <= range->second; t += step) {
        const Eigen::Vector3d p = origin + t * dir;
        const auto idx = grid.voxel_index(p);
        if (!idx) continue;
        const std::size_t v = grid.flat_index((*idx)[0], (*idx)[1], (*idx)[2]);
        if (labels[v] == kFreeClass) continue;
        const std::size_t pix = py * static_cast<std::size_t>(cam.width) +
                                static_cast<std::size_t>(px);
        view.depth[pix] = t / norm;  // optical-axis depth
        view.semantic[pix] = labels[v];
        break;
      }
    }
  });
  return view;
}

std::vector<RenderedView> render_views(std::span<const std::uint8_t> labels,
                                       const VoxelGridSpec& grid,
                                       std::span<const CameraModel> rig, int threads) {
  std::vector<RenderedView> out;
  out.reserve(rig.size());
  for (const auto& cam : rig) out.push_back(render_view(labels, grid, cam, threads));
  return out;
}

std::vector<std::uint8_t> visibility_mask(std::span<const std::uint8_t> labels,
                                          const VoxelGridSpec& grid,
                                          std::span<const CameraModel> rig, int threads) {
  grid.validate();
  const auto gs = grid.shape();
  const std::size_t n = gs[0] * gs[1] * gs[2];
  if (labels.size() != n) {
    throw std::invalid_argument("visibility_mask: labels size does not match grid");
  }
  std::vector<std::uint8_t> mask(n, 0);
  const double step = grid.voxel_size * 0.5;

  parallel_for(gs[0], threads, [&](std::size_t x) {
    for (std::size_t y = 0; y < gs[1]; ++y) {
      for (std::size_t z = 0; z < gs[2]; ++z) {
        const std::size_t target = grid.flat_index(x, y, z);
        const Eigen::Vector3d center = grid.voxel_center(x, y, z);
        for (const auto& cam : rig) {
          if (!project_ego_point(center, cam)) continue;
          const Eigen::Vector3d origin = cam.center();
          const Eigen::Vector3d offset = center - origin;
          const double dist = offset.norm();
          bool blocked = false;
          bool reached = dist == 0.0;
          if (dist > 0.0) {
            const Eigen::Vector3d dir = offset / dist;
            for (double t = 0.0; t <= dist; t += step) {
              const auto idx = grid.voxel_index(origin + t * dir);
              if (!idx) continue;
              const std::size_t v = grid.flat_index((*idx)[0], (*idx)[1], (*idx)[2]);
              if (v == target) {
                reached = true;
                break;
              }
              if (labels[v] != kFreeClass) {
                blocked = true;
                break;
              }
            }
          }
          if (!blocked && reached) {
            mask[target] = 1;
            break;
          }
        }
      }
    }
  });
  return mask;
}

Tensor view_to_image(const RenderedView& view, double depth_normalizer) {
  const auto h = static_cast<std::size_t>(view.height);
  const auto w = static_cast<std::size_t>(view.width);
  Tensor img({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t pix = y * w + x;
      const bool hit = view.depth[pix] != kDepthMiss;
      img(0, y, x) = hit ? view.depth[pix] / depth_normalizer : 0.0;
      img(1, y, x) = hit ? static_cast<double>(view.semantic[pix]) / 16.0 : 0.0;
      img(2, y, x) = hit ? 1.0 : 0.0;
    }
  }
  return img;
}

namespace {

CameraModel make_camera(double yaw_rad, const Eigen::Vector3d& position, int height, int width,
                        double focal) {
  CameraModel cam;
  cam.intrinsics = Eigen::Matrix3d::Identity();
  cam.intrinsics(0, 0) = focal;
  cam.intrinsics(1, 1) = focal;
  cam.intrinsics(0, 2) = (width - 1) * 0.5;
  cam.intrinsics(1, 2) = (height - 1) * 0.5;
  // Camera axes in ego frame: +z optical looks along ego yaw direction,
  // +x right, +y down.
  const Eigen::Vector3d forward(std::cos(yaw_rad), std::sin(yaw_rad), 0.0);
  const Eigen::Vector3d right(std::sin(yaw_rad), -std::cos(yaw_rad), 0.0);
  const Eigen::Vector3d down(0.0, 0.0, -1.0);
  cam.cam_to_ego.rotation.col(0) = right;
  cam.cam_to_ego.rotation.col(1) = down;
  cam.cam_to_ego.rotation.col(2) = forward;
  cam.cam_to_ego.translation = position;
  cam.height = height;
  cam.width = width;
  cam.validate();
  return cam;
}

}  // namespace

SceneSpec make_preset_scene(const std::string& preset, std::uint64_t seed) {
  SceneSpec scene;
  scene.grid.min_corner = Eigen::Vector3d(-8.0, -8.0, -1.0);
  scene.grid.max_corner = Eigen::Vector3d(8.0, 8.0, 2.2);
  scene.grid.voxel_size = 0.4;

  const int h = 64, w = 160;
  scene.rig.push_back(make_camera(0.0, Eigen::Vector3d(0.0, 0.0, 1.4), h, w, 90.0));
  scene.rig.push_back(make_camera(M_PI / 2.0, Eigen::Vector3d(0.0, 0.0, 1.4), h, w, 90.0));
  scene.rig.push_back(make_camera(-M_PI / 2.0, Eigen::Vector3d(0.0, 0.0, 1.4), h, w, 90.0));

  ScenePrimitive ground;
  ground.kind = ScenePrimitive::Kind::kGroundPlane;
  ground.pose = RigidTransform::translate(Eigen::Vector3d(0.0, 0.0, -0.8));
  ground.dimensions = Eigen::Vector3d(1.0, 1.0, 0.6);
  ground.class_id = 11;  // driveable surface
  scene.primitives.push_back(ground);

  if (preset == "simple") {
    ScenePrimitive car;
    car.pose = RigidTransform::translate(Eigen::Vector3d(4.0, 0.6, 0.2));
    car.dimensions = Eigen::Vector3d(3.2, 1.6, 1.4);
    car.class_id = 4;
    scene.primitives.push_back(car);

    ScenePrimitive barrier;
    barrier.pose = RigidTransform::translate(Eigen::Vector3d(2.0, -3.0, 0.0));
    barrier.dimensions = Eigen::Vector3d(0.8, 4.0, 1.0);
    barrier.class_id = 1;
    scene.primitives.push_back(barrier);

    ScenePrimitive wall;
    wall.pose = RigidTransform::translate(Eigen::Vector3d(6.8, 3.0, 0.6));
    wall.dimensions = Eigen::Vector3d(0.8, 6.0, 2.4);
    wall.class_id = 15;  // manmade
    scene.primitives.push_back(wall);
  } else if (preset == "random") {
    DeterministicRng rng(seed);
    static constexpr std::array<int, 6> kKinds = {4, 1, 15, 10, 16, 7};
    const std::size_t count = 3 + rng.index(4);
    for (std::size_t i = 0; i < count; ++i) {
      ScenePrimitive box;
      const double yaw = rng.uniform(0.0, 2.0 * M_PI);
      box.pose = RigidTransform::yaw(yaw);
      box.pose.translation = Eigen::Vector3d(rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0),
                                             rng.uniform(-0.2, 0.6));
      box.dimensions = Eigen::Vector3d(rng.uniform(0.8, 3.5), rng.uniform(0.8, 2.5),
                                       rng.uniform(0.8, 2.0));
      box.class_id = kKinds[rng.index(kKinds.size())];
      scene.primitives.push_back(box);
    }
  } else {
    throw std::invalid_argument("make_preset_scene: unknown preset '" + preset + "'");
  }

  scene.ego_trajectory = {RigidTransform::identity(),
                          RigidTransform::translate(Eigen::Vector3d(0.8, 0.0, 0.0))};
  scene.validate();
  return scene;
}

OccupancyGrid read_occupancy_gt(const std::string& path) {
  const auto container = TensorContainer::load(path);
  const auto& sem = container.get("semantics");
  if (sem.dtype != "u8" || sem.shape.size() != 3) {
    throw std::runtime_error("occupancy gt: 'semantics' must be a u8 X*Y*Z tensor");
  }
  OccupancyGrid gt;
  gt.shape = {sem.shape[0], sem.shape[1], sem.shape[2]};
  gt.labels = container.as_u8("semantics");

  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] >= kNumClasses) bad.push_back(i);
  }
  if (!bad.empty()) {
    std::string msg = "occupancy gt: validation error: labels outside [0,17] at indices";
    for (std::size_t i = 0; i < bad.size() && i < 20; ++i) msg += " " + std::to_string(bad[i]);
    if (bad.size() > 20) msg += " (+" + std::to_string(bad.size() - 20) + " more)";
    throw std::runtime_error(msg);
  }

  if (container.has("mask_camera")) {
    const auto& mask = container.get("mask_camera");
    if (mask.dtype != "u8" || mask.shape != sem.shape) {
      throw std::runtime_error("occupancy gt: 'mask_camera' must match the semantics shape");
    }
    gt.camera_mask = container.as_u8("mask_camera");
  } else {
    gt.camera_mask.assign(gt.labels.size(), 1);
  }
  gt.validate();
  return gt;
}

void write_occupancy_gt(const std::string& path, const OccupancyGrid& gt) {
  gt.validate();
  TensorContainer container;
  const std::vector<std::size_t> shape{gt.shape[0], gt.shape[1], gt.shape[2]};
  container.add_u8("semantics", shape, gt.labels);
  container.add_u8("mask_camera", shape, gt.camera_mask);
  container.save(path);
}

PredictionResult read_prediction(const std::string& path) {
  const auto container = TensorContainer::load(path);
  PredictionResult pred;
  pred.probs = container.get_tensor("probs");
  if (pred.probs.rank() != 4 || pred.probs.dim(0) != kNumClasses) {
    throw std::runtime_error("prediction: 'probs' must be an 18 x X x Y x Z tensor");
  }
  return pred;
}

void write_prediction(const std::string& path, const PredictionResult& pred) {
  TensorContainer container;
  container.add_tensor("probs", pred.probs);
  container.save(path);
}

}  // namespace fbocc
