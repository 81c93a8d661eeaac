#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fbocc/forward_vtm.hpp"
#include "fbocc/geometry.hpp"
#include "fbocc/tensor.hpp"

namespace fbocc {

struct BevFeatureMap {
  Tensor values;  // C x X x Y
};

struct BackwardLayerWeights {
  Tensor weight;  // C x C output projection
  Tensor bias;    // C

  static BackwardLayerWeights identity(std::size_t channels);
  static BackwardLayerWeights zeros(std::size_t channels);
  static BackwardLayerWeights random(std::size_t channels, std::uint64_t seed);
  void validate(std::size_t channels) const;

  void store(TensorContainer& out) const;
  static BackwardLayerWeights from_container(const TensorContainer& in, std::size_t channels);
};

/// Mean over the z axis per (c, x, y). Uses pairwise summation so the
/// expand/compress round trip is exact for power-of-two Z.
BevFeatureMap compress_voxel_to_bev(const VoxelFeatureVolume& vol);

/// Bilinear interpolation at continuous feature-pixel (u, v); pixel
/// centers sit at integer coordinates. Absent outside [0,Wf-1]x[0,Hf-1].
std::optional<std::vector<double>> bilinear_sample(const ImageFeatureMap& map, double u, double v);

/// Scalar variant over one depth slice of a D x Hf x Wf distribution.
std::optional<double> bilinear_sample_plane(const Tensor& planes, std::size_t plane, double u,
                                            double v);

/// One depth-weighted refinement layer. Every BEV cell places n_heights
/// reference points spaced at z-bin centers above its horizontal
/// center, projects them into each camera, bilinearly samples the image
/// features, and weights each hit by the depth-distribution probability
/// of the bin containing the projected depth (0 outside the bin range).
/// refined = bev + linear(sum_i w_i f_i / n_hits); cells whose total
/// hit weight is zero pass through exactly.
BevFeatureMap backward_project(const BevFeatureMap& bev, std::span<const EncoderOutput> cameras,
                               std::span<const CameraModel> rig, const DepthBinSpec& bins,
                               const VoxelGridSpec& grid, const BackwardLayerWeights& weights,
                               std::size_t n_heights = 4, int threads = 1);

/// Image pixel -> continuous feature pixel at the given stride.
inline double image_to_feature_pixel(double image_px, int stride) {
  return (image_px + 0.5) / static_cast<double>(stride) - 0.5;
}

}  // namespace fbocc
