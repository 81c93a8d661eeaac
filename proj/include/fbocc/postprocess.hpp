#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fbocc/geometry.hpp"
#include "fbocc/occ_head.hpp"

namespace fbocc {

/// One of the eight test-time augmentation branches.
struct FlipCombo {
  bool image_hflip = false;
  bool flip_x = false;
  bool flip_y = false;
};

/// Index reversal of a prediction volume along x and/or y. Its own
/// inverse, used to align each TTA branch back to the base frame.
PredictionResult flip_prediction(const PredictionResult& pred, bool flip_x, bool flip_y);

/// Runs `model` on all eight {image h-flip} x {3D x-flip} x {3D y-flip}
/// combinations, un-flips each prediction volume and averages in a
/// fixed enumeration order. The callee is responsible for transforming
/// its inputs according to the combo.
PredictionResult tta_flips(const std::function<PredictionResult(const FlipCombo&)>& model);

struct TemporalRecord {
  PredictionResult prediction;
  RigidTransform ego_pose;  // frame -> world
};

/// Default static classes: barrier, driveable surface, other flat,
/// sidewalk, terrain, manmade, vegetation.
const std::set<std::uint8_t>& default_static_classes();

/// Replaces each static-class voxel with the co-located prediction from
/// the most recent history frame in which the voxel's world point was
/// within near_radius of that frame's ego position (horizontal
/// distance) and inside the grid. History is ordered oldest to newest.
PredictionResult temporal_tta(const PredictionResult& current,
                              std::span<const TemporalRecord> history,
                              const RigidTransform& current_pose, const VoxelGridSpec& grid,
                              const std::set<std::uint8_t>& static_classes,
                              double near_radius = 8.0);

struct EnsembleMember {
  PredictionResult prediction;
  double model_miou = 0.0;
  std::array<double, kNumClasses> class_ious{};
};

struct EnsembleWeights {
  std::vector<double> model;                           // one per member
  std::vector<std::array<double, kNumClasses>> per_class;  // one row per member

  static EnsembleWeights defaults_from(std::span<const EnsembleMember> members);
  static EnsembleWeights identity_of(std::size_t n_members, std::size_t selected);
  void validate(std::size_t n_members) const;
};

/// Two-factor weighted combination. Per voxel and class c:
///   out[c] = sum_m(w_m * v_mc * p_mc) / sum_m(w_m * v_mc),
/// falling back to the unweighted mean when the denominator is zero,
/// then renormalized to a simplex. Defaults: w_m = model_miou,
/// v_mc = class_ious[c].
PredictionResult ensemble(std::span<const EnsembleMember> members,
                          const std::optional<EnsembleWeights>& weights = std::nullopt);

struct WeightSearchResult {
  EnsembleWeights weights;
  double achieved_miou = 0.0;
};

/// Seeded random search plus coordinate refinement over the weight
/// table, maximizing mIoU against the validation grid. The identity
/// weighting of every member is always among the trials, so the result
/// is never below the best single member.
WeightSearchResult search_weights(std::span<const EnsembleMember> members,
                                  const OccupancyGrid& validation_gt, std::size_t budget,
                                  std::uint64_t seed);

}  // namespace fbocc
