#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segprobe/label_mask.hpp"

namespace segprobe {

/// Accumulated confusion counts (rows = ground truth, cols = prediction)
/// and the IoU summary derived from them by finalize().
struct MetricReport {
  int num_classes = 0;
  std::vector<std::int64_t> confusion;
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  std::int64_t evaluated_pixels = 0;

  static MetricReport empty(int num_classes);

  std::int64_t count(int gt, int pred) const {
    return confusion[static_cast<std::size_t>(gt * num_classes + pred)];
  }
};

/// Adds one image. Pixels whose gt is the ignore index are skipped. A
/// prediction must be a committed class in [0, C).
void accumulate(MetricReport& report, std::span<const std::uint8_t> pred, const LabelMask& gt);
void accumulate(MetricReport& report, const LabelMask& pred, const LabelMask& gt);

struct IouSummary {
  std::vector<std::optional<double>> per_class;  ///< empty when TP+FP+FN == 0
  double miou = 0.0;
};

/// IoU_c = TP / (TP + FP + FN); classes with a zero denominator are left out
/// of the mean. Throws MetricError when nothing was evaluated.
IouSummary compute_iou(const MetricReport& report);

/// Fills per_class_iou and miou from the confusion matrix.
void finalize(MetricReport& report);

/// Element-wise sum of two reports over the same class count.
MetricReport merge(const MetricReport& a, const MetricReport& b);

/// mIoU of `pred` against `gt` in percent.
double miou_percent(const LabelMask& pred, const LabelMask& gt);

std::string report_to_json(const MetricReport& report);
/// One row per class: class,iou,tp,fp,fn,gt_pixels.
std::string report_to_csv(const MetricReport& report);

}  // namespace segprobe
