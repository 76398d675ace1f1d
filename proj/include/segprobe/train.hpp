#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "segprobe/feature_store.hpp"
#include "segprobe/probe.hpp"

namespace segprobe {

/// Optimizer, schedule and augmentation settings. Defaults follow the
/// reference recipe: SGD, batch 10, 20k iterations at lr 1e-3, 448 px crops
/// and horizontal flips. Momentum and weight decay are not part of that
/// recipe and are exposed so runs can record them.
struct TrainConfig {
  double learning_rate = 0.001;
  int iterations = 20000;
  int batch_size = 10;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int crop_pixels = 448;
  double flip_prob = 0.5;
  Normalization normalization = Normalization::LabeledCount;
  LossHead loss_head = LossHead::Softmax;
  std::uint64_t seed = 0;
  int workers = 1;
  bool standardize = false;
  /// In-memory sample cache budget for store-backed training.
  std::size_t cache_mb = 2048;

  /// Throws std::invalid_argument on any violated invariant.
  void validate(int patch_size) const;
  LossOptions loss_options() const { return {normalization, loss_head}; }
  /// Stable key order; used in checkpoints and run records.
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct AugmentResult {
  ImageSample sample;
  std::vector<std::string> warnings;
};

/// Reverses the grid width of the features and the pixel width of the mask.
ImageSample flip_horizontal(const ImageSample& sample);

/// Keeps grid cells [y0, y0+rows) × [x0, x0+cols) and the pixel region those
/// patches cover. An axis cropped to its full extent keeps all its pixels.
ImageSample crop_grid(const ImageSample& sample, std::size_t y0, std::size_t x0,
                      std::size_t rows, std::size_t cols, int patch_size);

/// Random crop of crop_pixels / patch_size cells per axis plus a horizontal
/// flip with probability flip_prob. An axis shorter than the crop is left
/// whole and reported in `warnings`. Photometric jitter does not apply to
/// stored features.
AugmentResult augment(const ImageSample& sample, const TrainConfig& config, int patch_size,
                      std::uint64_t seed);

struct TrainResult {
  ProbeParams params;
  std::vector<double> loss_history;
  std::vector<std::string> warnings;
  std::size_t unsupervised_samples = 0;
};

/// Per-dimension mean / inverse standard deviation over the given samples.
FeatureStandardizer fit_standardizer(std::size_t count,
                                     const std::function<FeatureMap(std::size_t)>& load);

/// Mini-batch SGD with momentum from zero-initialized parameters. Samples
/// are drawn from a seeded shuffle that is redrawn every epoch; batch
/// contents and the update sequence depend only on the seed, never on the
/// worker count.
TrainResult train(std::size_t sample_count, const std::function<ImageSample(std::size_t)>& load,
                  int patch_size, std::size_t feature_dim, std::size_t num_classes,
                  const TrainConfig& config);

/// In-memory convenience overload.
TrainResult train(std::span<const ImageSample> samples, int patch_size, std::size_t num_classes,
                  const TrainConfig& config);

/// Store-backed training. Every id must exist and carry a mask; violations
/// are reported before the first iteration. The store is only read.
TrainResult train(const FeatureStore& store, std::span<const std::string> image_ids,
                  const TrainConfig& config);

}  // namespace segprobe
