#pragma once

#include <map>
#include <string>

#include "fbocc/forward_vtm.hpp"
#include "fbocc/geometry.hpp"
#include "fbocc/occ_head.hpp"

namespace fbocc {

inline constexpr double kLossEps = 1e-6;

struct LossWeights {
  double focal = 1.0;
  double dice = 1.0;
  double scal_geo = 1.0;
  double scal_sem = 1.0;
  double lovasz = 1.0;
  double depth = 1.0;
  double semantic2d = 1.0;

  void validate() const;
};

/// All losses are forward-only metrics over camera-visible voxels.
/// Sums run row-major; floating-point order is part of the contract.

/// Distance-aware focal: mean over visible voxels of
/// w(d) * (1 - p_t)^gamma * (-log p_t), w(d) = 0.5 + d/d_max with d the
/// voxel's horizontal distance from the ego origin.
double distance_aware_focal(const PredictionResult& pred, const OccupancyGrid& gt,
                            const VoxelGridSpec& grid, double gamma = 2.0);

/// Soft Dice, averaged over classes present among visible gt voxels.
double dice_loss(const PredictionResult& pred, const OccupancyGrid& gt);

/// Scene-class affinity over the occupied/free binarization: the mean
/// of -log of precision, recall and specificity (undefined ratios are
/// skipped; arguments clamp to [eps, 1]).
double scal_geo(const PredictionResult& pred, const OccupancyGrid& gt);

/// Per-class affinity, averaged over classes present in visible gt.
double scal_sem(const PredictionResult& pred, const OccupancyGrid& gt);

/// Lovasz-softmax: per present class, descending-sorted errors dotted
/// with the Jaccard-extension gradient, averaged over classes.
double lovasz_softmax(const PredictionResult& pred, const OccupancyGrid& gt);

/// Cross-entropy against the one-hot bin of each ground-truth depth;
/// pixels outside [min_depth, max_depth) are skipped. Keys are
/// feature-resolution (row, col) pairs.
double depth_ce(const DepthDistribution& depth, const SparseDepthMap& gt_depth,
                const DepthBinSpec& bins);

/// Softmax cross-entropy over labeled feature pixels.
double semantic2d_ce(const SemanticLogits2D& logits, const SparseLabelMap& gt_labels);

struct LossTerms {
  double focal = 0.0;
  double dice = 0.0;
  double scal_geo = 0.0;
  double scal_sem = 0.0;
  double lovasz = 0.0;
  double depth = 0.0;
  double semantic2d = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> weighted_terms;
};

LossBreakdown total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace fbocc
