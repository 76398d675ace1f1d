#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "segprobe/feature_store.hpp"
#include "segprobe/label_mask.hpp"
#include "segprobe/tensor.hpp"

namespace segprobe {

/// Denominator of the masked loss: labeled-pixel count, or H·W as written in
/// the original pixel-wise formulation.
enum class Normalization { LabeledCount, Eq1Literal };

/// Softmax over classes, or independent per-class sigmoids (one-vs-rest BCE).
enum class LossHead { Softmax, PerClassSigmoid };

std::string_view to_string(Normalization n);
std::string_view to_string(LossHead h);
std::optional<Normalization> parse_normalization(std::string_view s);
std::optional<LossHead> parse_loss_head(std::string_view s);

/// Per-feature affine standardization fitted on training features. Optional;
/// the head is a pure affine map unless this is attached to the params.
struct FeatureStandardizer {
  std::vector<float> mean;
  std::vector<float> inv_std;

  FeatureMap apply(const FeatureMap& f) const;
  friend bool operator==(const FeatureStandardizer&, const FeatureStandardizer&) = default;
};

/// The linear segmentation head: logits = token · weight + bias.
template <typename T>
struct BasicProbeParams {
  BasicTensor<T> weight;  ///< dim × num_classes
  std::vector<T> bias;    ///< num_classes
  std::optional<FeatureStandardizer> standardizer;

  static BasicProbeParams zeros(std::size_t dim, std::size_t num_classes) {
    return {BasicTensor<T>({dim, num_classes}), std::vector<T>(num_classes, T{0}), std::nullopt};
  }

  std::size_t dim() const { return weight.extent(0); }
  std::size_t num_classes() const { return weight.extent(1); }

  template <typename U>
  BasicProbeParams<U> cast() const {
    return {weight.template cast<U>(), std::vector<U>(bias.begin(), bias.end()), standardizer};
  }

  friend bool operator==(const BasicProbeParams&, const BasicProbeParams&) = default;
};

using ProbeParams = BasicProbeParams<float>;
using ProbeParamsD = BasicProbeParams<double>;

template <typename T>
struct BasicSegmentationOutput {
  BasicTensor<T> logits;  ///< image_h × image_w × C
  LabelMask argmax_map;
};

using SegmentationOutput = BasicSegmentationOutput<float>;

/// grid_h × grid_w × C logits before upsampling.
template <typename T>
BasicTensor<T> patch_logits(const FeatureMap& features, const BasicProbeParams<T>& params);

/// Affine head per patch token, then align-corners bilinear upsampling to
/// pixel resolution. Throws std::invalid_argument on a dim mismatch.
template <typename T>
BasicSegmentationOutput<T> forward(const FeatureMap& features, const BasicProbeParams<T>& params);

struct LossValue {
  double value = 0.0;
  std::size_t labeled_pixels = 0;
  /// No pixel carried supervision; value is defined as 0.
  bool unsupervised = false;
};

struct LossOptions {
  Normalization normalization = Normalization::LabeledCount;
  LossHead head = LossHead::Softmax;
};

/// Masked pixel-wise cross-entropy over dense pixel logits. Pixels labeled
/// with the ignore index contribute nothing.
template <typename T>
LossValue masked_ce_loss(const BasicTensor<T>& logits, const LabelMask& labels,
                         const LossOptions& options);

template <typename T>
LossValue masked_ce_loss(const BasicSegmentationOutput<T>& out, const LabelMask& labels,
                         const LossOptions& options) {
  return masked_ce_loss(out.logits, labels, options);
}

template <typename T>
struct BasicGradient {
  double loss = 0.0;
  BasicTensor<T> weight;
  std::vector<T> bias;
  std::size_t unsupervised_samples = 0;
};

/// Batch loss (mean of per-sample losses) and its analytic gradient.
///
/// Only supervised pixels are visited: each one reads its four bilinear taps
/// from the patch logits and scatters dL/dlogit back through the same taps,
/// which is the adjoint of the upsampling restricted to M_i = 1. Every
/// sample must carry labels.
template <typename T>
BasicGradient<T> loss_and_grad(const BasicProbeParams<T>& params,
                               std::span<const ImageSample> batch, const LossOptions& options);

}  // namespace segprobe
