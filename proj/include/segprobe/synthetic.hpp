#pragma once

#include <cstdint>
#include <filesystem>

#include "segprobe/feature_store.hpp"

namespace segprobe {

/// Parameters of a linearly separable toy store. Each patch takes the class
/// of the nearest of `regions` random sites, its token is one-hot(class) plus
/// N(0, noise²) per dim, and pixel truth is the argmax of the upsampled
/// noise-free one-hot grid.
struct SyntheticSpec {
  int images = 50;
  int grid = 16;
  int dim = 32;
  int classes = 4;
  double noise = 0.1;
  int patch = 14;
  int regions = 6;
  std::uint64_t seed = 0;
};

/// One synthetic image with dense ground truth. `index` selects the image
/// within the seed stream of SyntheticSpec::seed.
ImageSample make_synthetic_sample(const SyntheticSpec& spec, int index);

/// Writes spec.images samples (ids "img_0000", ...) into a new store.
FeatureStore make_synthetic_store(const std::filesystem::path& dir, const SyntheticSpec& spec);

}  // namespace segprobe
