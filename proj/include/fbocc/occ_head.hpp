#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "fbocc/backward_vtm.hpp"
#include "fbocc/forward_vtm.hpp"
#include "fbocc/geometry.hpp"
#include "fbocc/tensor.hpp"

namespace fbocc {

inline constexpr std::size_t kNumClasses = 18;
inline constexpr std::uint8_t kFreeClass = 17;

/// Occ3D-nuScenes class order; index 17 is the free class.
extern const std::array<std::string_view, kNumClasses> kClassNames;

/// Per-voxel semantic labels plus the camera-visibility mask.
struct OccupancyGrid {
  std::array<std::size_t, 3> shape{0, 0, 0};  // X, Y, Z
  std::vector<std::uint8_t> labels;           // class ids, row-major
  std::vector<std::uint8_t> camera_mask;      // 1 = visible from some camera

  std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (x * shape[1] + y) * shape[2] + z;
  }
  void validate() const;
};

/// Per-voxel class probabilities; each voxel is a simplex over classes.
struct PredictionResult {
  Tensor probs;  // kNumClasses x X x Y x Z

  std::array<std::size_t, 3> grid_shape() const {
    return {probs.dim(1), probs.dim(2), probs.dim(3)};
  }
  bool is_simplex(double tol = 1e-5) const;
};

struct HeadWeights {
  Tensor conv1_w, conv1_b;  // (C, C, 3, 3, 3), (C)
  Tensor conv2_w, conv2_b;
  Tensor cls_w, cls_b;  // (18, C), (18)

  static HeadWeights zeros(std::size_t channels);
  static HeadWeights random(std::size_t channels, std::uint64_t seed);
  void validate(std::size_t channels) const;

  void store(TensorContainer& out) const;
  static HeadWeights from_container(const TensorContainer& in, std::size_t channels);
};

/// Broadcast copy of the BEV map along a new z axis.
VoxelFeatureVolume expand_bev_to_voxel(const BevFeatureMap& bev, std::size_t z);

/// Element-wise sum; shapes must match.
VoxelFeatureVolume fuse(const VoxelFeatureVolume& a, const VoxelFeatureVolume& b);

/// Two padded 3x3x3 convolutions with a ReLU between, per-voxel linear
/// classifier, softmax over classes.
PredictionResult head_forward(const VoxelFeatureVolume& vol, const HeadWeights& weights,
                              int threads = 1);

/// Per-voxel argmax; ties resolve to the smallest class id.
std::vector<std::uint8_t> decode(const PredictionResult& pred);

/// Resamples `prev` at current voxel centers mapped through
/// prev_from_current (trilinear, zero outside the grid).
VoxelFeatureVolume align_voxel_features(const VoxelFeatureVolume& prev,
                                        const RigidTransform& prev_from_current,
                                        const VoxelGridSpec& grid, int threads = 1);

/// Trilinear sample of a (C, X, Y, Z) volume at an ego-frame point, on
/// voxel centers with zero padding. Returns per-channel values and the
/// total interpolation weight that fell inside the grid.
void trilinear_sample_volume(const Tensor& volume, const VoxelGridSpec& grid,
                             const Eigen::Vector3d& p, std::span<double> out, double* weight_sum);

}  // namespace fbocc
