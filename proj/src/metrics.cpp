#include "fbocc/metrics.hpp"

#include <numeric>
#include <stdexcept>

namespace fbocc {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::add(std::size_t gt, std::size_t pred, std::uint64_t count) {
  if (gt >= num_classes_ || pred >= num_classes_) {
    throw std::invalid_argument("ConfusionMatrix: label out of range");
  }
  counts_[gt * num_classes_ + pred] += count;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) {
    throw std::invalid_argument("ConfusionMatrix: class counts disagree");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix accumulate(std::span<const std::uint8_t> pred_labels, const OccupancyGrid& gt,
                           bool use_mask) {
  if (pred_labels.size() != gt.voxel_count()) {
    throw std::invalid_argument("accumulate: prediction and ground-truth sizes disagree");
  }
  ConfusionMatrix cm(kNumClasses);
  for (std::size_t v = 0; v < pred_labels.size(); ++v) {
    if (use_mask && !gt.camera_mask[v]) continue;
    if (gt.labels[v] >= kNumClasses || pred_labels[v] >= kNumClasses) {
      throw std::invalid_argument("accumulate: label out of [0,17]");
    }
    cm.add(gt.labels[v], pred_labels[v]);
  }
  return cm;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  std::vector<std::optional<double>> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = cm.at(c, c);
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    out[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return out;
}

double miou(std::span<const std::optional<double>> per_class,
            std::span<const std::size_t> classes) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t c : classes) {
    if (c >= per_class.size()) throw std::invalid_argument("miou: class index out of range");
    if (!per_class[c]) continue;
    acc += *per_class[c];
    ++count;
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

std::vector<std::size_t> default_eval_classes() {
  std::vector<std::size_t> out(kNumClasses - 1);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

}  // namespace fbocc
