#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "segprobe/label_mask.hpp"

namespace segprobe {

/// 4-connected region of equal, non-ignore labels.
struct Component {
  std::uint8_t label = 0;
  std::vector<std::size_t> pixels;  ///< flat indices, BFS order from the seed
  std::size_t min_y = 0, max_y = 0, min_x = 0, max_x = 0;
};

/// Components in raster order of their first pixel.
std::vector<Component> connected_components(const LabelMask& mask);

/// Point supervision: for every class in `gt`, min(k_per_class, class size)
/// pixels drawn uniformly without replacement; everything else ignored.
LabelMask synth_points(const LabelMask& gt, int k_per_class, std::uint64_t seed);

/// Scribble supervision: one confined self-avoiding walk per component of
/// roughly length_frac × (bounding-box diagonal) steps, dilated to
/// `thickness` pixels without leaving the component.
LabelMask synth_scribble(const LabelMask& gt, int thickness, double length_frac,
                         std::uint64_t seed);

struct NoisyOptions {
  double tolerance_pct = 2.0;
  int max_steps = 200000;
};

/// Dense pseudo-label whose mIoU against `gt` lands within ±tolerance of
/// target_miou_pct. Corrupts by local boundary shifts, blob flips and whole
/// region flips. Throws CalibrationError when the window cannot be reached.
LabelMask synth_noisy(const LabelMask& gt, double target_miou_pct, std::uint64_t seed,
                      const NoisyOptions& options = {});

}  // namespace segprobe
