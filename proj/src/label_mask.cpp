#include "segprobe/label_mask.hpp"

#include <algorithm>
#include <string>

#include "segprobe/error.hpp"

namespace segprobe {

LabelMask::LabelMask(std::size_t h, std::size_t w, int num_classes, std::uint8_t fill,
                     std::uint8_t ignore_index)
    : LabelMask(h, w, num_classes, std::vector<std::uint8_t>(h * w, fill), ignore_index) {}

LabelMask::LabelMask(std::size_t h, std::size_t w, int num_classes,
                     std::vector<std::uint8_t> values, std::uint8_t ignore_index)
    : h_(h), w_(w), num_classes_(num_classes), ignore_(ignore_index), values_(std::move(values)) {
  if (num_classes_ < 1 || num_classes_ > 255) {
    throw MaskError(MaskError::Kind::Shape, "num_classes must be in [1, 255]");
  }
  if (ignore_ < num_classes_) {
    throw MaskError(MaskError::Kind::Shape, "ignore_index " + std::to_string(ignore_) +
                                                " collides with class range [0, " +
                                                std::to_string(num_classes_) + ")");
  }
  if (values_.size() != h_ * w_) {
    throw MaskError(MaskError::Kind::Shape, "mask value count does not match " +
                                                std::to_string(h_) + "x" + std::to_string(w_));
  }
  validate();
}

std::size_t LabelMask::labeled_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(values_.begin(), values_.end(), [this](auto v) { return v != ignore_; }));
}

std::vector<std::size_t> LabelMask::class_histogram() const {
  std::vector<std::size_t> hist(static_cast<std::size_t>(num_classes_), 0);
  for (auto v : values_) {
    if (v != ignore_) ++hist[v];
  }
  return hist;
}

void LabelMask::validate() const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto v = values_[i];
    if (v != ignore_ && v >= num_classes_) {
      throw MaskError(MaskError::Kind::InvalidLabel,
                      "invalid label " + std::to_string(v) + " at (row " +
                          std::to_string(i / w_) + ", col " + std::to_string(i % w_) +
                          "); expected [0, " + std::to_string(num_classes_) + ") or " +
                          std::to_string(ignore_));
    }
  }
}

}  // namespace segprobe
