#include "segprobe/eval.hpp"

#include <json.hpp>

#include <sstream>
#include <stdexcept>

#include "segprobe/error.hpp"

namespace segprobe {

MetricReport MetricReport::empty(int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("MetricReport: num_classes must be >= 1");
  MetricReport r;
  r.num_classes = num_classes;
  const auto c = static_cast<std::size_t>(num_classes);
  r.confusion.assign(c * c, 0);
  r.per_class_iou.assign(c, std::nullopt);
  return r;
}

void accumulate(MetricReport& report, std::span<const std::uint8_t> pred, const LabelMask& gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("accumulate: prediction has " + std::to_string(pred.size()) +
                                " pixels, ground truth " + std::to_string(gt.size()));
  }
  if (gt.num_classes() != report.num_classes) {
    throw std::invalid_argument("accumulate: class count differs from report");
  }
  const int c = report.num_classes;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= c) {
      throw std::invalid_argument("accumulate: prediction value " + std::to_string(pred[i]) +
                                  " at pixel " + std::to_string(i) +
                                  " is not a committed class");
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!gt.is_labeled(i)) continue;
    ++report.confusion[static_cast<std::size_t>(gt[i] * c + pred[i])];
    ++report.evaluated_pixels;
  }
}

void accumulate(MetricReport& report, const LabelMask& pred, const LabelMask& gt) {
  if (pred.h() != gt.h() || pred.w() != gt.w()) {
    throw std::invalid_argument("accumulate: prediction and ground truth sizes differ");
  }
  accumulate(report, pred.values(), gt);
}

IouSummary compute_iou(const MetricReport& report) {
  if (report.evaluated_pixels < 1) {
    throw MetricError("mIoU undefined: no evaluated pixels");
  }
  const int c = report.num_classes;
  IouSummary out;
  out.per_class.assign(static_cast<std::size_t>(c), std::nullopt);
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    const std::int64_t tp = report.count(k, k);
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += report.count(k, j);
      col += report.count(j, k);
    }
    const std::int64_t denom = row + col - tp;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class[static_cast<std::size_t>(k)] = iou;
    sum += iou;
    ++present;
  }
  out.miou = sum / present;
  return out;
}

void finalize(MetricReport& report) {
  auto s = compute_iou(report);
  report.per_class_iou = std::move(s.per_class);
  report.miou = s.miou;
}

MetricReport merge(const MetricReport& a, const MetricReport& b) {
  if (a.num_classes != b.num_classes) throw std::invalid_argument("merge: class count differs");
  MetricReport out = MetricReport::empty(a.num_classes);
  for (std::size_t i = 0; i < out.confusion.size(); ++i) {
    out.confusion[i] = a.confusion[i] + b.confusion[i];
  }
  out.evaluated_pixels = a.evaluated_pixels + b.evaluated_pixels;
  return out;
}

double miou_percent(const LabelMask& pred, const LabelMask& gt) {
  MetricReport r = MetricReport::empty(gt.num_classes());
  accumulate(r, pred, gt);
  return 100.0 * compute_iou(r).miou;
}

std::string report_to_json(const MetricReport& report) {
  using nlohmann::json;
  const auto c = static_cast<std::size_t>(report.num_classes);
  json confusion = json::array();
  for (std::size_t r = 0; r < c; ++r) {
    json row = json::array();
    for (std::size_t k = 0; k < c; ++k) row.push_back(report.confusion[r * c + k]);
    confusion.push_back(row);
  }
  json iou = json::array();
  for (const auto& v : report.per_class_iou) iou.push_back(v ? json(*v) : json(nullptr));
  json j = {{"num_classes", report.num_classes},
            {"evaluated_pixels", report.evaluated_pixels},
            {"miou", report.miou},
            {"per_class_iou", iou},
            {"confusion", confusion}};
  return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "class,iou,tp,fp,fn,gt_pixels\n";
  const int c = report.num_classes;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += report.count(k, j);
      col += report.count(j, k);
    }
    const std::int64_t tp = report.count(k, k);
    out << k << ',';
    const auto& iou = report.per_class_iou[static_cast<std::size_t>(k)];
    if (iou) out << *iou;
    out << ',' << tp << ',' << col - tp << ',' << row - tp << ',' << row << '\n';
  }
  return out.str();
}

}  // namespace segprobe
