#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbocc/geometry.hpp"
#include "fbocc/occ_head.hpp"
#include "fbocc/tensor.hpp"

namespace fbocc {

/// Solid primitive in world coordinates. Boxes are half-open
/// axis-aligned extents [-s/2, s/2) in their own frame; ground planes
/// are horizontal slabs of the given thickness (dimensions.z) starting
/// at the frame origin, unbounded in x and y.
struct ScenePrimitive {
  enum class Kind { kBox, kGroundPlane };
  Kind kind = Kind::kBox;
  RigidTransform pose;
  Eigen::Vector3d dimensions = Eigen::Vector3d::Ones();
  int class_id = 0;

  bool contains(const Eigen::Vector3d& world_point) const;
  void validate() const;
};

struct SceneSpec {
  VoxelGridSpec grid;
  std::vector<ScenePrimitive> primitives;       // world frame
  std::vector<CameraModel> rig;                 // mounted, ego frame
  std::vector<RigidTransform> ego_trajectory;   // ego -> world per frame

  void validate() const;
  std::size_t frame_count() const { return ego_trajectory.empty() ? 1 : ego_trajectory.size(); }
  RigidTransform ego_pose(std::size_t frame) const;
  /// The scene with primitives mapped into the ego frame of `frame`.
  SceneSpec at_frame(std::size_t frame) const;

  static SceneSpec from_json_text(const std::string& text);
  static SceneSpec load(const std::string& path);
  std::string to_json_text() const;
  void save(const std::string& path) const;
};

/// Labels each voxel with the class of the last-listed primitive
/// containing its center, free otherwise. The camera mask comes back
/// all-visible; visibility_mask fills it in.
OccupancyGrid rasterize_scene(const SceneSpec& scene, const VoxelGridSpec& grid);

inline constexpr double kDepthMiss = -1.0;
inline constexpr std::uint8_t kSemanticMiss = 255;

struct RenderedView {
  int height = 0;
  int width = 0;
  std::vector<double> depth;           // H*W, meters along the optical axis; kDepthMiss on miss
  std::vector<std::uint8_t> semantic;  // H*W class ids; kSemanticMiss on miss
};

/// Per-pixel ray march through the voxel labels (step voxel_size/2);
/// the first occupied voxel yields depth and class.
RenderedView render_view(std::span<const std::uint8_t> labels, const VoxelGridSpec& grid,
                         const CameraModel& cam, int threads = 1);
std::vector<RenderedView> render_views(std::span<const std::uint8_t> labels,
                                       const VoxelGridSpec& grid,
                                       std::span<const CameraModel> rig, int threads = 1);

/// A voxel is visible when some camera sees its center in-frustum with
/// no occupied voxel strictly in front of it along the ray.
std::vector<std::uint8_t> visibility_mask(std::span<const std::uint8_t> labels,
                                          const VoxelGridSpec& grid,
                                          std::span<const CameraModel> rig, int threads = 1);

/// Packs a rendered view into the encoder's 3-channel input image:
/// normalized depth, normalized class id, hit mask.
Tensor view_to_image(const RenderedView& view, double depth_normalizer);

/// Deterministic scene presets for the CLI ("simple" or "random").
SceneSpec make_preset_scene(const std::string& preset, std::uint64_t seed);

OccupancyGrid read_occupancy_gt(const std::string& path);
void write_occupancy_gt(const std::string& path, const OccupancyGrid& gt);

PredictionResult read_prediction(const std::string& path);
void write_prediction(const std::string& path, const PredictionResult& pred);

}  // namespace fbocc
