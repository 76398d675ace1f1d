#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segprobe/label_mask.hpp"

namespace oracle {

/// IoU per class from explicit pixel-index sets; nullopt when the union is empty.
std::vector<std::optional<double>> set_iou(const segprobe::LabelMask& pred,
                                           const segprobe::LabelMask& gt);
/// Mean over classes with a non-empty union.
double set_miou(const segprobe::LabelMask& pred, const segprobe::LabelMask& gt);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b);

/// Fresh, empty scratch directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& tag);

}  // namespace oracle

#include <span>

#include "segprobe/feature_store.hpp"
#include "segprobe/probe.hpp"
#include "segprobe/rng.hpp"

namespace oracle {

/// Sample with N(0,1) tokens on a grid_h × grid_w grid and random labels;
/// each pixel is ignored with probability `ignore_prob`.
segprobe::ImageSample random_sample(segprobe::Rng& rng, std::size_t grid_h, std::size_t grid_w,
                                    std::size_t dim, int classes, std::size_t image_h,
                                    std::size_t image_w, double ignore_prob);

/// Batch loss through the dense route: forward (full upsampling) then
/// masked_ce_loss, averaged over samples. Independent of loss_and_grad.
double dense_batch_loss(const segprobe::ProbeParamsD& params,
                        std::span<const segprobe::ImageSample> batch,
                        const segprobe::LossOptions& options);

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares loss_and_grad against central differences of dense_batch_loss
/// on every weight and bias coordinate. Relative error is
/// |a - n| / max(|a|, |n|, floor).
FdReport finite_difference_check(const segprobe::ProbeParamsD& params,
                                 std::span<const segprobe::ImageSample> batch,
                                 const segprobe::LossOptions& options, double step = 1e-5,
                                 double floor = 1e-6);

}  // namespace oracle
