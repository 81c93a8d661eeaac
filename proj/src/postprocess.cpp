#include "fbocc/postprocess.hpp"

#include <cmath>
#include <stdexcept>

#include "fbocc/metrics.hpp"

namespace fbocc {

PredictionResult flip_prediction(const PredictionResult& pred, bool flip_x, bool flip_y) {
  const std::size_t k = pred.probs.dim(0);
  const std::size_t nx = pred.probs.dim(1), ny = pred.probs.dim(2), nz = pred.probs.dim(3);
  PredictionResult out;
  out.probs = Tensor({k, nx, ny, nz});
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t sx = flip_x ? nx - 1 - x : x;
      for (std::size_t y = 0; y < ny; ++y) {
        const std::size_t sy = flip_y ? ny - 1 - y : y;
        for (std::size_t z = 0; z < nz; ++z) {
          out.probs(c, x, y, z) = pred.probs(c, sx, sy, z);
        }
      }
    }
  }
  return out;
}

PredictionResult tta_flips(const std::function<PredictionResult(const FlipCombo&)>& model) {
  PredictionResult mean;
  bool first = true;
  for (int h = 0; h < 2; ++h) {
    for (int fx = 0; fx < 2; ++fx) {
      for (int fy = 0; fy < 2; ++fy) {
        const FlipCombo combo{h != 0, fx != 0, fy != 0};
        PredictionResult branch = model(combo);
        if (combo.flip_x || combo.flip_y) {
          branch = flip_prediction(branch, combo.flip_x, combo.flip_y);
        }
        if (first) {
          mean = std::move(branch);
          first = false;
        } else {
          if (!mean.probs.same_shape(branch.probs)) {
            throw std::invalid_argument("tta_flips: branch prediction shapes disagree");
          }
          for (std::size_t i = 0; i < mean.probs.size(); ++i) mean.probs[i] += branch.probs[i];
        }
      }
    }
  }
  for (std::size_t i = 0; i < mean.probs.size(); ++i) mean.probs[i] /= 8.0;
  return mean;
}

const std::set<std::uint8_t>& default_static_classes() {
  static const std::set<std::uint8_t> classes = {1, 11, 12, 13, 14, 15, 16};
  return classes;
}

PredictionResult temporal_tta(const PredictionResult& current,
                              std::span<const TemporalRecord> history,
                              const RigidTransform& current_pose, const VoxelGridSpec& grid,
                              const std::set<std::uint8_t>& static_classes, double near_radius) {
  if (near_radius <= 0.0) throw std::invalid_argument("temporal_tta: near_radius must be > 0");
  if (history.empty()) return current;
  const auto gs = grid.shape();
  const auto ps = current.grid_shape();
  if (ps[0] != gs[0] || ps[1] != gs[1] || ps[2] != gs[2]) {
    throw std::invalid_argument("temporal_tta: prediction shape does not match grid");
  }
  const std::size_t k = current.probs.dim(0);
  const std::size_t n = gs[0] * gs[1] * gs[2];
  const auto labels = decode(current);

  PredictionResult out;
  out.probs = current.probs;
  std::vector<double> sample(k);
  for (std::size_t x = 0; x < gs[0]; ++x) {
    for (std::size_t y = 0; y < gs[1]; ++y) {
      for (std::size_t z = 0; z < gs[2]; ++z) {
        const std::size_t v = (x * gs[1] + y) * gs[2] + z;
        if (!static_classes.count(labels[v])) continue;
        const Eigen::Vector3d world = current_pose.apply(grid.voxel_center(x, y, z));
        for (std::size_t h = history.size(); h-- > 0;) {  // most recent first
          const Eigen::Vector3d q = history[h].ego_pose.inverse().apply(world);
          if (std::hypot(q.x(), q.y()) > near_radius) continue;
          if (!grid.contains(q)) continue;
          double wsum = 0.0;
          trilinear_sample_volume(history[h].prediction.probs, grid, q, sample, &wsum);
          if (wsum <= 0.0) continue;
          for (std::size_t c = 0; c < k; ++c) out.probs[c * n + v] = sample[c] / wsum;
          break;
        }
      }
    }
  }
  return out;
}

EnsembleWeights EnsembleWeights::defaults_from(std::span<const EnsembleMember> members) {
  EnsembleWeights w;
  for (const auto& m : members) {
    w.model.push_back(m.model_miou);
    w.per_class.push_back(m.class_ious);
  }
  return w;
}

EnsembleWeights EnsembleWeights::identity_of(std::size_t n_members, std::size_t selected) {
  EnsembleWeights w;
  w.model.assign(n_members, 0.0);
  w.model[selected] = 1.0;
  std::array<double, kNumClasses> ones;
  ones.fill(1.0);
  w.per_class.assign(n_members, ones);
  return w;
}

void EnsembleWeights::validate(std::size_t n_members) const {
  if (model.size() != n_members || per_class.size() != n_members) {
    throw std::invalid_argument("EnsembleWeights: table size does not match member count");
  }
  for (double v : model) {
    if (!(v >= 0.0)) throw std::invalid_argument("EnsembleWeights: weights must be nonnegative");
  }
  for (const auto& row : per_class) {
    for (double v : row) {
      if (!(v >= 0.0)) throw std::invalid_argument("EnsembleWeights: weights must be nonnegative");
    }
  }
}

PredictionResult ensemble(std::span<const EnsembleMember> members,
                          const std::optional<EnsembleWeights>& weights) {
  if (members.empty()) throw std::invalid_argument("ensemble: no members");
  for (const auto& m : members) {
    if (!m.prediction.probs.same_shape(members[0].prediction.probs)) {
      throw std::invalid_argument("ensemble: member prediction shapes disagree");
    }
  }
  const EnsembleWeights w =
      weights ? *weights : EnsembleWeights::defaults_from(members);
  w.validate(members.size());

  const std::size_t k = members[0].prediction.probs.dim(0);
  const std::size_t n = members[0].prediction.probs.size() / k;
  PredictionResult out;
  out.probs = Tensor(members[0].prediction.probs.shape());

  for (std::size_t v = 0; v < n; ++v) {
    double voxel_total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double num = 0.0, den = 0.0;
      for (std::size_t m = 0; m < members.size(); ++m) {
        const double wm = w.model[m] * w.per_class[m][c];
        num += wm * members[m].prediction.probs[c * n + v];
        den += wm;
      }
      double combined;
      if (den > 0.0) {
        combined = num / den;
      } else {  // zero total weight for this class: unweighted mean
        combined = 0.0;
        for (std::size_t m = 0; m < members.size(); ++m) {
          combined += members[m].prediction.probs[c * n + v];
        }
        combined /= static_cast<double>(members.size());
      }
      out.probs[c * n + v] = combined;
      voxel_total += combined;
    }
    if (voxel_total > 0.0) {
      for (std::size_t c = 0; c < k; ++c) out.probs[c * n + v] /= voxel_total;
    }
  }
  return out;
}

namespace {

double score_weights(std::span<const EnsembleMember> members, const EnsembleWeights& w,
                     const OccupancyGrid& gt) {
  const auto combined = ensemble(members, w);
  const auto labels = decode(combined);
  const auto cm = accumulate(labels, gt, true);
  const auto ious = iou_per_class(cm);
  const auto classes = default_eval_classes();
  return miou(ious, classes);
}

}  // namespace

WeightSearchResult search_weights(std::span<const EnsembleMember> members,
                                  const OccupancyGrid& validation_gt, std::size_t budget,
                                  std::uint64_t seed) {
  if (members.empty()) throw std::invalid_argument("search_weights: no members");
  if (budget < 1) throw std::invalid_argument("search_weights: budget must be >= 1");
  if (validation_gt.voxel_count() == 0) {
    throw std::invalid_argument("search_weights: empty validation set");
  }

  WeightSearchResult best;
  best.achieved_miou = -1.0;
  std::size_t trials = 0;
  const auto consider = [&](const EnsembleWeights& w) {
    const double score = score_weights(members, w, validation_gt);
    ++trials;
    if (score > best.achieved_miou) {
      best.achieved_miou = score;
      best.weights = w;
    }
  };

  // Identity weightings first: the search can never fall below the best
  // single member. These do not count against the budget.
  for (std::size_t m = 0; m < members.size(); ++m) {
    consider(EnsembleWeights::identity_of(members.size(), m));
  }
  consider(EnsembleWeights::defaults_from(members));

  trials = 0;
  DeterministicRng rng(seed);
  const std::size_t random_trials = (budget + 1) / 2;
  while (trials < random_trials) {
    EnsembleWeights w;
    for (std::size_t m = 0; m < members.size(); ++m) {
      w.model.push_back(rng.uniform());
      std::array<double, kNumClasses> row;
      for (auto& v : row) v = rng.uniform();
      w.per_class.push_back(row);
    }
    consider(w);
  }

  // Coordinate refinement around the incumbent.
  static constexpr std::array<double, 5> kLevels = {0.0, 0.25, 0.5, 0.75, 1.0};
  while (trials < budget) {
    EnsembleWeights w = best.weights;
    const std::size_t m = rng.index(members.size());
    const std::size_t coord = rng.index(kNumClasses + 1);
    const double level = kLevels[rng.index(kLevels.size())];
    if (coord == kNumClasses) {
      w.model[m] = level;
    } else {
      w.per_class[m][coord] = level;
    }
    consider(w);
  }
  return best;
}

}  // namespace fbocc
