#include "fbocc/forward_vtm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "fbocc/container.hpp"

namespace fbocc {

void DepthBinSpec::validate() const {
  if (num_bins < 2) throw std::invalid_argument("DepthBinSpec: num_bins must be >= 2");
  if (!(max_depth > min_depth)) {
    throw std::invalid_argument("DepthBinSpec: max_depth must exceed min_depth");
  }
}

std::vector<double> DepthBinSpec::edges() const {
  std::vector<double> e(num_bins + 1);
  for (std::size_t i = 0; i <= num_bins; ++i) {
    e[i] = min_depth + (max_depth - min_depth) * static_cast<double>(i) / static_cast<double>(num_bins);
  }
  return e;
}

std::optional<std::size_t> DepthBinSpec::bin_of(double depth) const {
  if (depth < min_depth || depth >= max_depth) return std::nullopt;
  auto d = static_cast<long long>(std::floor((depth - min_depth) / bin_width()));
  if (d < 0) d = 0;
  if (d >= static_cast<long long>(num_bins)) d = static_cast<long long>(num_bins) - 1;
  return static_cast<std::size_t>(d);
}

double DepthBinSpec::bin_center(std::size_t d) const {
  return min_depth + (static_cast<double>(d) + 0.5) * bin_width();
}

void EncoderConfig::validate() const {
  if (in_channels == 0 || conv1_channels == 0 || conv2_channels == 0 || hidden_channels == 0 ||
      context_channels == 0 || depth_bins < 2 || semantic_classes == 0) {
    throw std::invalid_argument("EncoderConfig: all channel counts must be positive");
  }
}

namespace {

Tensor rand_tensor(std::vector<std::size_t> shape, DeterministicRng& rng, double scale) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

void check_shape(const Tensor& t, const std::vector<std::size_t>& want, const std::string& name) {
  if (t.shape() != want) {
    std::string msg = "weights: tensor '" + name + "' has shape (";
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
      msg += (i ? "," : "") + std::to_string(t.shape()[i]);
    }
    msg += "), expected (";
    for (std::size_t i = 0; i < want.size(); ++i) {
      msg += (i ? "," : "") + std::to_string(want[i]);
    }
    msg += ")";
    throw std::invalid_argument(msg);
  }
}

/// 2D convolution, kernel 3, zero padding 1, arbitrary stride.
Tensor conv2d_s(const Tensor& in, const Tensor& w, const Tensor& b, int stride) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0);
  const std::size_t ho = (h - 1) / static_cast<std::size_t>(stride) + 1;
  const std::size_t wo = (wd - 1) / static_cast<std::size_t>(stride) + 1;
  Tensor out({cout, ho, wo});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        double acc = b(co);
        const long long cy = static_cast<long long>(y) * stride;
        const long long cx = static_cast<long long>(x) * stride;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (int ky = -1; ky <= 1; ++ky) {
            const long long sy = cy + ky;
            if (sy < 0 || sy >= static_cast<long long>(h)) continue;
            for (int kx = -1; kx <= 1; ++kx) {
              const long long sx = cx + kx;
              if (sx < 0 || sx >= static_cast<long long>(wd)) continue;
              acc += w(co, ci, static_cast<std::size_t>(ky + 1), static_cast<std::size_t>(kx + 1)) *
                     in(ci, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
        }
        out(co, y, x) = acc;
      }
    }
  }
  return out;
}

void relu_inplace(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 0.0) t[i] = 0.0;
  }
}

/// Per-pixel linear head on a (Cin, H, W) map.
Tensor linear_head(const Tensor& in, const Tensor& w, const Tensor& b) {
  const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const std::size_t cout = w.dim(0);
  Tensor out({cout, h, wd});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < wd; ++x) {
        double acc = b(co);
        for (std::size_t ci = 0; ci < cin; ++ci) acc += w(co, ci) * in(ci, y, x);
        out(co, y, x) = acc;
      }
    }
  }
  return out;
}

void softmax_over_dim0(Tensor& t) {
  const std::size_t k = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double mx = t(0, y, x);
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, t(c, y, x));
      double total = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double e = std::exp(t(c, y, x) - mx);
        t(c, y, x) = e;
        total += e;
      }
      for (std::size_t c = 0; c < k; ++c) t(c, y, x) /= total;
    }
  }
}

}  // namespace

EncoderWeights EncoderWeights::zeros(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderWeights w;
  w.conv1_w = Tensor({cfg.conv1_channels, cfg.in_channels, 3, 3});
  w.conv1_b = Tensor({cfg.conv1_channels});
  w.conv2_w = Tensor({cfg.conv2_channels, cfg.conv1_channels, 3, 3});
  w.conv2_b = Tensor({cfg.conv2_channels});
  w.conv3_w = Tensor({cfg.hidden_channels, cfg.conv2_channels, 3, 3});
  w.conv3_b = Tensor({cfg.hidden_channels});
  w.ctx_w = Tensor({cfg.context_channels, cfg.hidden_channels});
  w.ctx_b = Tensor({cfg.context_channels});
  w.depth_w = Tensor({cfg.depth_bins, cfg.hidden_channels});
  w.depth_b = Tensor({cfg.depth_bins});
  w.sem_w = Tensor({cfg.semantic_classes, cfg.hidden_channels});
  w.sem_b = Tensor({cfg.semantic_classes});
  return w;
}

EncoderWeights EncoderWeights::random(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DeterministicRng rng(seed);
  EncoderWeights w;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.in_channels) * 9.0);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.conv1_channels) * 9.0);
  const double s3 = 1.0 / std::sqrt(static_cast<double>(cfg.conv2_channels) * 9.0);
  const double sh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_channels));
  w.conv1_w = rand_tensor({cfg.conv1_channels, cfg.in_channels, 3, 3}, rng, s1);
  w.conv1_b = rand_tensor({cfg.conv1_channels}, rng, 0.1);
  w.conv2_w = rand_tensor({cfg.conv2_channels, cfg.conv1_channels, 3, 3}, rng, s2);
  w.conv2_b = rand_tensor({cfg.conv2_channels}, rng, 0.1);
  w.conv3_w = rand_tensor({cfg.hidden_channels, cfg.conv2_channels, 3, 3}, rng, s3);
  w.conv3_b = rand_tensor({cfg.hidden_channels}, rng, 0.1);
  w.ctx_w = rand_tensor({cfg.context_channels, cfg.hidden_channels}, rng, sh);
  w.ctx_b = rand_tensor({cfg.context_channels}, rng, 0.1);
  w.depth_w = rand_tensor({cfg.depth_bins, cfg.hidden_channels}, rng, sh);
  w.depth_b = rand_tensor({cfg.depth_bins}, rng, 0.1);
  w.sem_w = rand_tensor({cfg.semantic_classes, cfg.hidden_channels}, rng, sh);
  w.sem_b = rand_tensor({cfg.semantic_classes}, rng, 0.1);
  return w;
}

void EncoderWeights::validate(const EncoderConfig& cfg) const {
  cfg.validate();
  check_shape(conv1_w, {cfg.conv1_channels, cfg.in_channels, 3, 3}, "encoder.conv1.weight");
  check_shape(conv1_b, {cfg.conv1_channels}, "encoder.conv1.bias");
  check_shape(conv2_w, {cfg.conv2_channels, cfg.conv1_channels, 3, 3}, "encoder.conv2.weight");
  check_shape(conv2_b, {cfg.conv2_channels}, "encoder.conv2.bias");
  check_shape(conv3_w, {cfg.hidden_channels, cfg.conv2_channels, 3, 3}, "encoder.conv3.weight");
  check_shape(conv3_b, {cfg.hidden_channels}, "encoder.conv3.bias");
  check_shape(ctx_w, {cfg.context_channels, cfg.hidden_channels}, "encoder.head_context.weight");
  check_shape(ctx_b, {cfg.context_channels}, "encoder.head_context.bias");
  check_shape(depth_w, {cfg.depth_bins, cfg.hidden_channels}, "encoder.head_depth.weight");
  check_shape(depth_b, {cfg.depth_bins}, "encoder.head_depth.bias");
  check_shape(sem_w, {cfg.semantic_classes, cfg.hidden_channels}, "encoder.head_semantic.weight");
  check_shape(sem_b, {cfg.semantic_classes}, "encoder.head_semantic.bias");
}

void EncoderWeights::store(TensorContainer& out) const {
  out.add_tensor("encoder.conv1.weight", conv1_w);
  out.add_tensor("encoder.conv1.bias", conv1_b);
  out.add_tensor("encoder.conv2.weight", conv2_w);
  out.add_tensor("encoder.conv2.bias", conv2_b);
  out.add_tensor("encoder.conv3.weight", conv3_w);
  out.add_tensor("encoder.conv3.bias", conv3_b);
  out.add_tensor("encoder.head_context.weight", ctx_w);
  out.add_tensor("encoder.head_context.bias", ctx_b);
  out.add_tensor("encoder.head_depth.weight", depth_w);
  out.add_tensor("encoder.head_depth.bias", depth_b);
  out.add_tensor("encoder.head_semantic.weight", sem_w);
  out.add_tensor("encoder.head_semantic.bias", sem_b);
}

EncoderWeights EncoderWeights::from_container(const TensorContainer& in, const EncoderConfig& cfg) {
  EncoderWeights w;
  w.conv1_w = in.get_tensor("encoder.conv1.weight");
  w.conv1_b = in.get_tensor("encoder.conv1.bias");
  w.conv2_w = in.get_tensor("encoder.conv2.weight");
  w.conv2_b = in.get_tensor("encoder.conv2.bias");
  w.conv3_w = in.get_tensor("encoder.conv3.weight");
  w.conv3_b = in.get_tensor("encoder.conv3.bias");
  w.ctx_w = in.get_tensor("encoder.head_context.weight");
  w.ctx_b = in.get_tensor("encoder.head_context.bias");
  w.depth_w = in.get_tensor("encoder.head_depth.weight");
  w.depth_b = in.get_tensor("encoder.head_depth.bias");
  w.sem_w = in.get_tensor("encoder.head_semantic.weight");
  w.sem_b = in.get_tensor("encoder.head_semantic.bias");
  w.validate(cfg);
  return w;
}

EncoderOutput predict_depth_and_context(const Tensor& image, const EncoderConfig& cfg,
                                        const EncoderWeights& weights) {
  weights.validate(cfg);
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels) {
    throw std::invalid_argument("encoder: image must be (in_channels, H, W)");
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h % EncoderConfig::kStride != 0 || w % EncoderConfig::kStride != 0) {
    throw std::invalid_argument("encoder: image size must be a multiple of the stride");
  }

  Tensor x = conv2d_s(image, weights.conv1_w, weights.conv1_b, 4);
  relu_inplace(x);
  x = conv2d_s(x, weights.conv2_w, weights.conv2_b, 2);
  relu_inplace(x);
  x = conv2d_s(x, weights.conv3_w, weights.conv3_b, 2);
  relu_inplace(x);

  EncoderOutput out;
  out.features.values = linear_head(x, weights.ctx_w, weights.ctx_b);
  out.features.stride = EncoderConfig::kStride;
  out.depth.probs = linear_head(x, weights.depth_w, weights.depth_b);
  softmax_over_dim0(out.depth.probs);
  out.semantics.logits = linear_head(x, weights.sem_w, weights.sem_b);
  return out;
}

FrustumFeatures lift(const ImageFeatureMap& features, const DepthDistribution& depth) {
  const std::size_t c = features.values.dim(0);
  const std::size_t hf = features.values.dim(1), wf = features.values.dim(2);
  if (depth.probs.rank() != 3 || depth.probs.dim(1) != hf || depth.probs.dim(2) != wf) {
    throw std::invalid_argument("lift: feature map and depth distribution sizes disagree");
  }
  const std::size_t d = depth.probs.dim(0);
  FrustumFeatures out;
  out.values = Tensor({c, d, hf, wf});
  out.stride = features.stride;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t di = 0; di < d; ++di) {
      for (std::size_t y = 0; y < hf; ++y) {
        for (std::size_t x = 0; x < wf; ++x) {
          out.values(ci, di, y, x) = features.values(ci, y, x) * depth.probs(di, y, x);
        }
      }
    }
  }
  return out;
}

VoxelFeatureVolume splat(const FrustumFeatures& frustum, const CameraModel& cam,
                         const DepthBinSpec& bins, const VoxelGridSpec& grid) {
  bins.validate();
  grid.validate();
  const std::size_t c = frustum.values.dim(0), d = frustum.values.dim(1);
  const std::size_t hf = frustum.values.dim(2), wf = frustum.values.dim(3);
  if (d != bins.num_bins) {
    throw std::invalid_argument("splat: frustum depth dimension does not match bin count");
  }
  const auto gs = grid.shape();
  VoxelFeatureVolume vol;
  vol.values = Tensor({c, gs[0], gs[1], gs[2]});
  for (std::size_t di = 0; di < d; ++di) {
    const double depth = bins.bin_center(di);
    for (std::size_t y = 0; y < hf; ++y) {
      const double v = feature_to_image_pixel(y, frustum.stride);
      for (std::size_t x = 0; x < wf; ++x) {
        const double u = feature_to_image_pixel(x, frustum.stride);
        const Eigen::Vector3d p = unproject_pixel(u, v, depth, cam);
        const auto idx = grid.voxel_index(p);
        if (!idx) continue;
        for (std::size_t ci = 0; ci < c; ++ci) {
          vol.values(ci, (*idx)[0], (*idx)[1], (*idx)[2]) += frustum.values(ci, di, y, x);
        }
      }
    }
  }
  return vol;
}

std::vector<EncoderOutput> encode_cameras(std::span<const Tensor> images, const EncoderConfig& cfg,
                                          const EncoderWeights& weights, int threads) {
  std::vector<EncoderOutput> out(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { out[i] = predict_depth_and_context(images[i], cfg, weights); });
  return out;
}

VoxelFeatureVolume multi_camera_splat(std::span<const EncoderOutput> encoded,
                                      std::span<const CameraModel> rig, const DepthBinSpec& bins,
                                      const VoxelGridSpec& grid, int threads) {
  if (rig.empty()) throw std::invalid_argument("multi_camera_splat: empty rig");
  if (encoded.size() != rig.size()) {
    throw std::invalid_argument("multi_camera_splat: encoder outputs and rig sizes disagree");
  }
  std::vector<VoxelFeatureVolume> partial(rig.size());
  parallel_for(rig.size(), threads, [&](std::size_t i) {
    partial[i] = splat(lift(encoded[i].features, encoded[i].depth), rig[i], bins, grid);
  });
  VoxelFeatureVolume total = std::move(partial[0]);
  for (std::size_t i = 1; i < partial.size(); ++i) {
    for (std::size_t k = 0; k < total.values.size(); ++k) total.values[k] += partial[i].values[k];
  }
  return total;
}

VoxelFeatureVolume multi_camera_forward(std::span<const Tensor> images,
                                        std::span<const CameraModel> rig, const EncoderConfig& cfg,
                                        const EncoderWeights& weights, const DepthBinSpec& bins,
                                        const VoxelGridSpec& grid, int threads) {
  if (rig.empty()) throw std::invalid_argument("multi_camera_forward: empty rig");
  if (images.size() != rig.size()) {
    throw std::invalid_argument("multi_camera_forward: image and rig counts disagree");
  }
  const auto encoded = encode_cameras(images, cfg, weights, threads);
  return multi_camera_splat(encoded, rig, bins, grid, threads);
}

}  // namespace fbocc
