#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fbocc/geometry.hpp"
#include "fbocc/tensor.hpp"

namespace fbocc {

class TensorContainer;

/// Uniform metric depth bins; defaults follow the 80-bin 2..42 m layout.
struct DepthBinSpec {
  std::size_t num_bins = 80;
  double min_depth = 2.0;
  double max_depth = 42.0;

  void validate() const;
  double bin_width() const { return (max_depth - min_depth) / static_cast<double>(num_bins); }
  std::vector<double> edges() const;
  /// Half-open containing bin; absent outside [min_depth, max_depth).
  std::optional<std::size_t> bin_of(double depth) const;
  double bin_center(std::size_t d) const;
};

struct ImageFeatureMap {
  Tensor values;    // C x Hf x Wf
  int stride = 16;  // feature pixel -> image pixel scale
};

struct DepthDistribution {
  Tensor probs;  // D x Hf x Wf, each pixel a categorical over bins
};

struct SemanticLogits2D {
  Tensor logits;  // K x Hf x Wf
};

struct FrustumFeatures {
  Tensor values;  // C x D x Hf x Wf
  int stride = 16;
};

struct VoxelFeatureVolume {
  Tensor values;  // C x X x Y x Z, ego frame
};

/// Stub encoder configuration: three stride-{4,2,2} 3x3 convolutions
/// (total stride 16) followed by per-pixel linear heads for context
/// features, depth bins and 2D semantics.
struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t conv1_channels = 16;
  std::size_t conv2_channels = 16;
  std::size_t hidden_channels = 32;
  std::size_t context_channels = 32;
  std::size_t depth_bins = 80;
  std::size_t semantic_classes = 18;

  static constexpr int kStride = 16;
  void validate() const;
};

struct EncoderWeights {
  Tensor conv1_w, conv1_b;  // (c1, cin, 3, 3), (c1)
  Tensor conv2_w, conv2_b;  // (c2, c1, 3, 3), (c2)
  Tensor conv3_w, conv3_b;  // (hidden, c2, 3, 3), (hidden)
  Tensor ctx_w, ctx_b;      // (context, hidden), (context)
  Tensor depth_w, depth_b;  // (depth_bins, hidden), (depth_bins)
  Tensor sem_w, sem_b;      // (classes, hidden), (classes)

  static EncoderWeights zeros(const EncoderConfig& cfg);
  static EncoderWeights random(const EncoderConfig& cfg, std::uint64_t seed);
  /// Throws naming the offending tensor on any shape disagreement.
  void validate(const EncoderConfig& cfg) const;

  void store(TensorContainer& out) const;
  static EncoderWeights from_container(const TensorContainer& in, const EncoderConfig& cfg);
};

struct EncoderOutput {
  ImageFeatureMap features;
  DepthDistribution depth;
  SemanticLogits2D semantics;
};

/// Deterministic forward pass of the stub encoder on a (Cin, H, W)
/// image; H and W must be multiples of the stride.
EncoderOutput predict_depth_and_context(const Tensor& image, const EncoderConfig& cfg,
                                        const EncoderWeights& weights);

/// Per-pixel outer product of features with the depth categorical:
/// frustum[c,d,h,w] = features[c,h,w] * probs[d,h,w].
FrustumFeatures lift(const ImageFeatureMap& features, const DepthDistribution& depth);

/// Unprojects every frustum cell at its bin-center depth through the
/// center of its stride-scaled pixel and sum-accumulates its feature
/// vector into the containing voxel. Cells outside the grid are
/// dropped. Accumulation is row-major over (d, h, w) for determinism.
VoxelFeatureVolume splat(const FrustumFeatures& frustum, const CameraModel& cam,
                         const DepthBinSpec& bins, const VoxelGridSpec& grid);

std::vector<EncoderOutput> encode_cameras(std::span<const Tensor> images, const EncoderConfig& cfg,
                                          const EncoderWeights& weights, int threads = 1);

/// lift+splat per camera, volumes summed in rig order.
VoxelFeatureVolume multi_camera_splat(std::span<const EncoderOutput> encoded,
                                      std::span<const CameraModel> rig, const DepthBinSpec& bins,
                                      const VoxelGridSpec& grid, int threads = 1);

/// Full forward path: encoder, lift and splat for every camera.
VoxelFeatureVolume multi_camera_forward(std::span<const Tensor> images,
                                        std::span<const CameraModel> rig, const EncoderConfig& cfg,
                                        const EncoderWeights& weights, const DepthBinSpec& bins,
                                        const VoxelGridSpec& grid, int threads = 1);

/// Image-pixel center of feature column/row `f` at the given stride.
inline double feature_to_image_pixel(std::size_t f, int stride) {
  return (static_cast<double>(f) + 0.5) * stride - 0.5;
}

}  // namespace fbocc
