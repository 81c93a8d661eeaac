#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fbocc {

/// Proper rigid motion p -> R*p + t. Rotations must be orthonormal with
/// det +1 within 1e-9 (validate() checks).
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform translate(const Eigen::Vector3d& t);
  /// Rotation about +z by `rad` (yaw), zero translation.
  static RigidTransform yaw(double rad);

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// Composition: (a.compose(b)).apply(p) == a.apply(b.apply(p)).
  RigidTransform compose(const RigidTransform& other) const;
  void validate(double tol = 1e-9) const;
};

/// Pinhole camera. Pixel convention: u along width, v along height,
/// origin at the top-left pixel, pixel centers at integer coordinates.
struct CameraModel {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  RigidTransform cam_to_ego;
  int height = 0;
  int width = 0;

  void validate() const;
  Eigen::Vector3d center() const { return cam_to_ego.translation; }
};

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // along the optical axis, meters
};

/// Projects an ego-frame point; absent when the depth along the optical
/// axis is <= 0 or the pixel falls outside [0,W) x [0,H).
std::optional<PixelDepth> project_ego_point(const Eigen::Vector3d& point, const CameraModel& cam);

/// Inverse of project_ego_point: the ego point at optical-axis depth
/// `depth` behind pixel (u, v).
Eigen::Vector3d unproject_pixel(double u, double v, double depth, const CameraModel& cam);

/// Axis-aligned voxel grid over [min_corner, max_corner), uniform voxel
/// size. (max-min)/voxel_size must be integral per axis.
struct VoxelGridSpec {
  Eigen::Vector3d min_corner = Eigen::Vector3d(-40.0, -40.0, -1.0);
  Eigen::Vector3d max_corner = Eigen::Vector3d(40.0, 40.0, 5.4);
  double voxel_size = 0.4;

  static VoxelGridSpec nuscenes_default() { return {}; }
  void validate() const;
  std::array<std::size_t, 3> shape() const;
  std::size_t voxel_count() const;
  bool contains(const Eigen::Vector3d& p) const;
  std::optional<std::array<std::size_t, 3>> voxel_index(const Eigen::Vector3d& p) const;
  Eigen::Vector3d voxel_center(std::size_t ix, std::size_t iy, std::size_t iz) const;
  /// Largest horizontal distance from the ego origin to a grid corner.
  double max_horizontal_distance() const;
  std::size_t flat_index(std::size_t ix, std::size_t iy, std::size_t iz) const;
};

struct LidarFrame {
  std::vector<Eigen::Vector3d> points;  // ego frame, meters
  std::vector<int> labels;              // empty, or one class id per point

  void validate() const;
  bool has_labels() const { return !labels.empty(); }
};

struct DepthSample {
  double depth = 0.0;
  std::optional<int> label;
};

/// Key is (v, u); std::map keeps iteration deterministic.
using SparseDepthMap = std::map<std::pair<int, int>, DepthSample>;
using SparseLabelMap = std::map<std::pair<int, int>, int>;

/// Projects every point, rounds to the nearest pixel center and keeps
/// the smallest depth per pixel (nearest surface wins on collisions).
SparseDepthMap lidar_to_image(const LidarFrame& frame, const CameraModel& cam);

std::vector<Eigen::Vector3d> transform_points(std::span<const Eigen::Vector3d> points,
                                              const RigidTransform& t);

/// Reduces an image-resolution depth map to feature resolution, keeping
/// the smallest depth inside each stride x stride cell.
SparseDepthMap downsample_depth_map(const SparseDepthMap& image_res, int stride);

/// Text point clouds: one point per line, `x y z` or `x y z label`,
/// '#' comments and blank lines ignored.
LidarFrame load_lidar_xyz(const std::string& path);
LidarFrame parse_lidar_xyz(const std::string& text);

/// Camera rig JSON: array of objects with `intrinsics` (row-major 9),
/// `rotation` (row-major 9), `translation` (3), `height`, `width`.
std::vector<CameraModel> load_camera_rig(const std::string& path);
std::vector<CameraModel> parse_camera_rig(const std::string& json_text);
std::string camera_rig_to_json(std::span<const CameraModel> rig);

}  // namespace fbocc
