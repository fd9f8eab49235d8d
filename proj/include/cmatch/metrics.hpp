#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmatch/tensor.hpp"

namespace cmatch {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Pixelwise tallies with 1 as the positive class.
ConfusionCounts confusion_counts(const BinaryMask& pred, const BinaryMask& gt);

// TP / (TP + FP + FN); 1.0 when the class is absent from both masks.
double iou(const ConfusionCounts& c);

double mean_iou(const std::vector<std::pair<std::string, double>>& per_class);

// Mean of foreground IoU and background IoU (roles inverted).
double fb_iou(const BinaryMask& pred, const BinaryMask& gt);

struct MetricReport {
  double iou_fg = 0.0;
  double iou_bg = 0.0;
  double fbiou = 0.0;
  double miou = 0.0;
  std::map<std::string, double> per_class;

  // `key = value` lines: iou_fg, iou_bg, fbiou, miou, then iou_<class>.
  std::string to_text() const;
};

// Single-episode report; the episode's class contributes its foreground IoU.
MetricReport evaluate_episode(const BinaryMask& pred, const BinaryMask& gt,
                              const std::string& class_id);

// Accumulates per-episode results. Per-class IoU is the mean over that class's
// episodes (macro averaging), and mIoU averages those per-class values.
class MetricAccumulator {
 public:
  void add(const std::string& class_id, const BinaryMask& pred, const BinaryMask& gt);
  void add(const std::string& class_id, const MetricReport& episode);

  std::size_t episodes() const noexcept { return fbiou_.size(); }
  std::map<std::string, double> per_class_iou() const;
  double miou() const;
  const std::vector<double>& fbiou_values() const noexcept { return fbiou_; }

 private:
  std::map<std::string, std::vector<double>> class_iou_;
  std::vector<double> fbiou_;
};

}  // namespace cmatch
