#include "fbocc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fbocc {

namespace {

double clamp_ratio(double r) { return std::clamp(r, kLossEps, 1.0); }

void check_shapes(const PredictionResult& pred, const OccupancyGrid& gt) {
  gt.validate();
  const auto ps = pred.grid_shape();
  if (pred.probs.dim(0) != kNumClasses || ps != gt.shape) {
    throw std::invalid_argument("loss: prediction and ground-truth shapes disagree");
  }
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {focal, dice, scal_geo, scal_sem, lovasz, depth, semantic2d}) {
    if (!(w >= 0.0)) throw std::invalid_argument("LossWeights: weights must be nonnegative");
  }
}

double distance_aware_focal(const PredictionResult& pred, const OccupancyGrid& gt,
                            const VoxelGridSpec& grid, double gamma) {
  check_shapes(pred, gt);
  const auto gs = gt.shape;
  const std::size_t n = gt.voxel_count();
  const double d_max = grid.max_horizontal_distance();
  double acc = 0.0;
  std::size_t visible = 0;
  for (std::size_t x = 0; x < gs[0]; ++x) {
    for (std::size_t y = 0; y < gs[1]; ++y) {
      for (std::size_t z = 0; z < gs[2]; ++z) {
        const std::size_t v = gt.index(x, y, z);
        if (!gt.camera_mask[v]) continue;
        ++visible;
        const Eigen::Vector3d center = grid.voxel_center(x, y, z);
        const double w = 0.5 + std::hypot(center.x(), center.y()) / d_max;
        const double pt = clamp_ratio(pred.probs[gt.labels[v] * n + v]);
        acc += w * std::pow(1.0 - pt, gamma) * (-std::log(pt));
      }
    }
  }
  return visible ? acc / static_cast<double>(visible) : 0.0;
}

double dice_loss(const PredictionResult& pred, const OccupancyGrid& gt) {
  check_shapes(pred, gt);
  const std::size_t n = gt.voxel_count();
  std::array<bool, kNumClasses> present{};
  for (std::size_t v = 0; v < n; ++v) {
    if (gt.camera_mask[v]) present[gt.labels[v]] = true;
  }
  double acc = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!present[c]) continue;
    double inter = 0.0, p_sum = 0.0, g_sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (!gt.camera_mask[v]) continue;
      const double p = pred.probs[c * n + v];
      const double g = gt.labels[v] == c ? 1.0 : 0.0;
      inter += p * g;
      p_sum += p;
      g_sum += g;
    }
    acc += 1.0 - (2.0 * inter + kLossEps) / (p_sum + g_sum + kLossEps);
    ++classes;
  }
  return classes ? acc / static_cast<double>(classes) : 0.0;
}

namespace {

/// -mean(log r) over the defined precision/recall/specificity ratios of
/// one binary problem with soft scores p and binary targets y.
std::optional<double> affinity_term(std::span<const double> p, std::span<const std::uint8_t> y) {
  double py = 0.0, p_sum = 0.0, y_sum = 0.0, comp = 0.0, comp_den = 0.0;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    py += p[i] * y[i];
    p_sum += p[i];
    y_sum += y[i];
    comp += (1.0 - p[i]) * (1.0 - y[i]);
    comp_den += 1.0 - y[i];
  }
  double acc = 0.0;
  std::size_t terms = 0;
  if (p_sum > 0.0) {
    acc += -std::log(clamp_ratio(py / p_sum));
    ++terms;
  }
  if (y_sum > 0.0) {
    acc += -std::log(clamp_ratio(py / y_sum));
    ++terms;
  }
  if (comp_den > 0.0) {
    acc += -std::log(clamp_ratio(comp / comp_den));
    ++terms;
  }
  if (terms == 0) return std::nullopt;
  return acc / static_cast<double>(terms);
}

}  // namespace

double scal_geo(const PredictionResult& pred, const OccupancyGrid& gt) {
  check_shapes(pred, gt);
  const std::size_t n = gt.voxel_count();
  std::vector<double> p;
  std::vector<std::uint8_t> y;
  p.reserve(n);
  y.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    if (!gt.camera_mask[v]) continue;
    p.push_back(1.0 - pred.probs[kFreeClass * n + v]);  // P(occupied)
    y.push_back(gt.labels[v] != kFreeClass ? 1 : 0);
  }
  const auto term = affinity_term(p, y);
  return term.value_or(0.0);
}

double scal_sem(const PredictionResult& pred, const OccupancyGrid& gt) {
  check_shapes(pred, gt);
  const std::size_t n = gt.voxel_count();
  std::vector<std::size_t> visible;
  for (std::size_t v = 0; v < n; ++v) {
    if (gt.camera_mask[v]) visible.push_back(v);
  }
  double acc = 0.0;
  std::size_t classes = 0;
  std::vector<double> p(visible.size());
  std::vector<std::uint8_t> y(visible.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    bool present = false;
    for (std::size_t i = 0; i < visible.size(); ++i) {
      p[i] = pred.probs[c * n + visible[i]];
      y[i] = gt.labels[visible[i]] == c ? 1 : 0;
      present = present || y[i];
    }
    if (!present) continue;
    if (const auto term = affinity_term(p, y)) {
      acc += *term;
      ++classes;
    }
  }
  return classes ? acc / static_cast<double>(classes) : 0.0;
}

double lovasz_softmax(const PredictionResult& pred, const OccupancyGrid& gt) {
  check_shapes(pred, gt);
  const std::size_t n = gt.voxel_count();
  std::vector<std::size_t> visible;
  for (std::size_t v = 0; v < n; ++v) {
    if (gt.camera_mask[v]) visible.push_back(v);
  }
  if (visible.empty()) return 0.0;

  std::array<bool, kNumClasses> present{};
  for (std::size_t v : visible) present[gt.labels[v]] = true;

  const std::size_t m = visible.size();
  std::vector<double> errors(m);
  std::vector<char> fg(m);
  std::vector<std::size_t> order(m);
  double acc = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!present[c]) continue;
    for (std::size_t i = 0; i < m; ++i) {
      const double p = pred.probs[c * n + visible[i]];
      fg[i] = gt.labels[visible[i]] == c ? 1 : 0;
      errors[i] = fg[i] ? 1.0 - p : p;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    double gts = 0.0;
    for (std::size_t i = 0; i < m; ++i) gts += fg[i];
    // Jaccard-extension gradient via prefix sums over the sorted order.
    double inter = gts, uni = gts, prev_jaccard = 0.0, loss_c = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t idx = order[i];
      inter -= fg[idx];
      uni += 1.0 - fg[idx];
      const double jaccard = 1.0 - inter / uni;
      loss_c += errors[idx] * (jaccard - prev_jaccard);
      prev_jaccard = jaccard;
    }
    acc += loss_c;
    ++classes;
  }
  return classes ? acc / static_cast<double>(classes) : 0.0;
}

double depth_ce(const DepthDistribution& depth, const SparseDepthMap& gt_depth,
                const DepthBinSpec& bins) {
  bins.validate();
  if (depth.probs.dim(0) != bins.num_bins) {
    throw std::invalid_argument("depth_ce: distribution bin count does not match spec");
  }
  const std::size_t hf = depth.probs.dim(1), wf = depth.probs.dim(2);
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& [key, sample] : gt_depth) {
    const auto [row, col] = key;
    if (row < 0 || col < 0 || static_cast<std::size_t>(row) >= hf ||
        static_cast<std::size_t>(col) >= wf) {
      throw std::invalid_argument("depth_ce: pixel outside the feature map");
    }
    const auto bin = bins.bin_of(sample.depth);
    if (!bin) continue;
    const double p = std::max(depth.probs(*bin, static_cast<std::size_t>(row),
                                          static_cast<std::size_t>(col)),
                              kLossEps * kLossEps);
    acc += -std::log(p);
    ++count;
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

double semantic2d_ce(const SemanticLogits2D& logits, const SparseLabelMap& gt_labels) {
  const std::size_t k = logits.logits.dim(0);
  const std::size_t hf = logits.logits.dim(1), wf = logits.logits.dim(2);
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& [key, label] : gt_labels) {
    const auto [row, col] = key;
    if (row < 0 || col < 0 || static_cast<std::size_t>(row) >= hf ||
        static_cast<std::size_t>(col) >= wf) {
      throw std::invalid_argument("semantic2d_ce: pixel outside the feature map");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::invalid_argument("semantic2d_ce: label out of range");
    }
    const auto r = static_cast<std::size_t>(row);
    const auto cc = static_cast<std::size_t>(col);
    double mx = logits.logits(0, r, cc);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits.logits(c, r, cc));
    double lse = 0.0;
    for (std::size_t c = 0; c < k; ++c) lse += std::exp(logits.logits(c, r, cc) - mx);
    acc += mx + std::log(lse) - logits.logits(static_cast<std::size_t>(label), r, cc);
    ++count;
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.weighted_terms["focal"] = weights.focal * terms.focal;
  out.weighted_terms["dice"] = weights.dice * terms.dice;
  out.weighted_terms["scal_geo"] = weights.scal_geo * terms.scal_geo;
  out.weighted_terms["scal_sem"] = weights.scal_sem * terms.scal_sem;
  out.weighted_terms["lovasz"] = weights.lovasz * terms.lovasz;
  out.weighted_terms["depth"] = weights.depth * terms.depth;
  out.weighted_terms["semantic2d"] = weights.semantic2d * terms.semantic2d;
  for (const auto& [name, value] : out.weighted_terms) out.total += value;
  return out;
}

}  // namespace fbocc
