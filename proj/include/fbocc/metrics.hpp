#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fbocc/occ_head.hpp"

namespace fbocc {

/// Rows are ground truth, columns are prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = kNumClasses);

  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const {
    return counts_[gt * num_classes_ + pred];
  }
  void add(std::size_t gt, std::size_t pred, std::uint64_t count = 1);
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  std::span<const std::uint64_t> counts() const { return counts_; }

 private:
  std::size_t num_classes_;
  std::vector<std::uint64_t> counts_;
};

/// Adds one count per voxel; voxels masked invisible are skipped when
/// use_mask is set. Throws on labels outside [0, num_classes).
ConfusionMatrix accumulate(std::span<const std::uint8_t> pred_labels, const OccupancyGrid& gt,
                           bool use_mask);

/// TP / (TP + FP + FN) per class; absent when that denominator is 0.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);

/// Mean IoU over the requested classes; classes whose IoU is absent are
/// excluded from the mean (they were never seen in either role).
double miou(std::span<const std::optional<double>> per_class,
            std::span<const std::size_t> classes);

/// The 17 semantic classes (free excluded), the default evaluation set.
std::vector<std::size_t> default_eval_classes();

}  // namespace fbocc
