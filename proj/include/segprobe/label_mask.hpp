#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace segprobe {

/// Per-pixel class indices at image resolution. A pixel is supervised
/// (M_i = 1 in the masked loss) iff its value differs from ignore_index.
class LabelMask {
 public:
  static constexpr std::uint8_t kDefaultIgnore = 255;

  LabelMask() = default;
  /// Mask of the given size filled with `fill` (ignore by default).
  LabelMask(std::size_t h, std::size_t w, int num_classes, std::uint8_t fill = kDefaultIgnore,
            std::uint8_t ignore_index = kDefaultIgnore);
  /// Takes ownership of row-major values; throws MaskError(InvalidLabel)
  /// naming the first out-of-range pixel.
  LabelMask(std::size_t h, std::size_t w, int num_classes, std::vector<std::uint8_t> values,
            std::uint8_t ignore_index = kDefaultIgnore);

  std::size_t h() const noexcept { return h_; }
  std::size_t w() const noexcept { return w_; }
  std::size_t size() const noexcept { return values_.size(); }
  int num_classes() const noexcept { return num_classes_; }
  std::uint8_t ignore_index() const noexcept { return ignore_; }

  std::span<const std::uint8_t> values() const noexcept { return values_; }
  std::uint8_t operator[](std::size_t i) const { return values_[i]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return values_[y * w_ + x]; }
  /// Unchecked write; callers keep values in [0, C) ∪ {ignore}.
  void set(std::size_t y, std::size_t x, std::uint8_t v) { values_[y * w_ + x] = v; }
  void set(std::size_t i, std::uint8_t v) { values_[i] = v; }

  bool is_labeled(std::size_t i) const { return values_[i] != ignore_; }
  std::size_t labeled_count() const noexcept;
  /// Pixel count per class (length C).
  std::vector<std::size_t> class_histogram() const;

  /// Re-checks the value invariant; throws MaskError(InvalidLabel).
  void validate() const;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  int num_classes_ = 0;
  std::uint8_t ignore_ = kDefaultIgnore;
  std::vector<std::uint8_t> values_;
};

}  // namespace segprobe
