#include "segprobe/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "segprobe/error.hpp"
#include "segprobe/rng.hpp"

namespace segprobe {

using json = nlohmann::json;

void TrainConfig::validate(int patch_size) const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (iterations < 1) fail("iterations must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must be in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (flip_prob < 0.0 || flip_prob > 1.0) fail("flip_prob must be in [0, 1]");
  if (workers < 1) fail("workers must be >= 1");
  if (patch_size < 1) fail("patch_size must be >= 1");
  if (crop_pixels < 1 || crop_pixels % patch_size != 0) {
    fail("crop_pixels " + std::to_string(crop_pixels) + " must be a positive multiple of patch size " +
         std::to_string(patch_size));
  }
}

std::string TrainConfig::to_json() const {
  json j = {{"learning_rate", learning_rate},
            {"iterations", iterations},
            {"batch_size", batch_size},
            {"momentum", momentum},
            {"weight_decay", weight_decay},
            {"crop_pixels", crop_pixels},
            {"flip_prob", flip_prob},
            {"normalization", std::string(to_string(normalization))},
            {"loss_head", std::string(to_string(loss_head))},
            {"seed", seed},
            {"workers", workers},
            {"standardize", standardize},
            {"cache_mb", cache_mb}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.crop_pixels = j.value("crop_pixels", c.crop_pixels);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  if (j.contains("normalization")) {
    const auto n = parse_normalization(j.at("normalization").get<std::string>());
    if (!n) throw std::invalid_argument("train config: unknown normalization");
    c.normalization = *n;
  }
  if (j.contains("loss_head")) {
    const auto h = parse_loss_head(j.at("loss_head").get<std::string>());
    if (!h) throw std::invalid_argument("train config: unknown loss_head");
    c.loss_head = *h;
  }
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.standardize = j.value("standardize", c.standardize);
  c.cache_mb = j.value("cache_mb", c.cache_mb);
  return c;
}

ImageSample flip_horizontal(const ImageSample& sample) {
  ImageSample out = sample;
  const auto& src = sample.features.data;
  const std::size_t gh = src.extent(0), gw = src.extent(1);
  auto& dst = out.features.data;
  for (std::size_t y = 0; y < gh; ++y) {
    for (std::size_t x = 0; x < gw; ++x) {
      const auto from = src.row(y, gw - 1 - x);
      std::copy(from.begin(), from.end(), dst.row(y, x).begin());
    }
  }
  if (sample.labels) {
    const auto& m = *sample.labels;
    LabelMask flipped = m;
    for (std::size_t y = 0; y < m.h(); ++y) {
      for (std::size_t x = 0; x < m.w(); ++x) flipped.set(y, x, m.at(y, m.w() - 1 - x));
    }
    out.labels = std::move(flipped);
  }
  return out;
}

ImageSample crop_grid(const ImageSample& sample, std::size_t y0, std::size_t x0,
                      std::size_t rows, std::size_t cols, int patch_size) {
  const auto& f = sample.features;
  const std::size_t gh = f.grid_h(), gw = f.grid_w(), z = f.dim();
  if (rows == 0 || cols == 0 || y0 + rows > gh || x0 + cols > gw) {
    throw std::invalid_argument("crop_grid: window outside the feature grid");
  }
  const auto patch = static_cast<std::size_t>(patch_size);
  auto pixel_span = [&](std::size_t start, std::size_t count, std::size_t grid, std::size_t image) {
    if (start == 0 && count == grid) return std::pair<std::size_t, std::size_t>{0, image};
    const std::size_t begin = std::min(start * patch, image);
    const std::size_t end = (start + count == grid) ? image : std::min((start + count) * patch, image);
    return std::pair<std::size_t, std::size_t>{begin, end};
  };
  const auto [py0, py1] = pixel_span(y0, rows, gh, f.image_h);
  const auto [px0, px1] = pixel_span(x0, cols, gw, f.image_w);
  if (py1 <= py0 || px1 <= px0) throw std::invalid_argument("crop_grid: empty pixel region");

  ImageSample out;
  out.provenance = sample.provenance;
  out.features.image_id = f.image_id;
  out.features.image_h = py1 - py0;
  out.features.image_w = px1 - px0;
  out.features.data = Tensor({rows, cols, z});
  for (std::size_t y = 0; y < rows; ++y) {
    for (std::size_t x = 0; x < cols; ++x) {
      const auto from = f.data.row(y0 + y, x0 + x);
      std::copy(from.begin(), from.end(), out.features.data.row(y, x).begin());
    }
  }
  if (sample.labels) {
    const auto& m = *sample.labels;
    std::vector<std::uint8_t> values;
    values.reserve((py1 - py0) * (px1 - px0));
    for (std::size_t y = py0; y < py1; ++y) {
      for (std::size_t x = px0; x < px1; ++x) values.push_back(m.at(y, x));
    }
    out.labels = LabelMask(py1 - py0, px1 - px0, m.num_classes(), std::move(values),
                           m.ignore_index());
  }
  return out;
}

AugmentResult augment(const ImageSample& sample, const TrainConfig& config, int patch_size,
                      std::uint64_t seed) {
  AugmentResult result;
  Rng rng(seed);
  const auto& f = sample.features;
  const std::size_t cells = static_cast<std::size_t>(config.crop_pixels / patch_size);
  std::size_t y0 = 0, x0 = 0, rows = f.grid_h(), cols = f.grid_w();
  if (cells <= f.grid_h()) {
    rows = cells;
    y0 = rng.below(f.grid_h() - cells + 1);
  } else {
    result.warnings.push_back("crop of " + std::to_string(cells) +
                              " cells exceeds grid height " + std::to_string(f.grid_h()) +
                              "; height not cropped");
  }
  if (cells <= f.grid_w()) {
    cols = cells;
    x0 = rng.below(f.grid_w() - cells + 1);
  } else {
    result.warnings.push_back("crop of " + std::to_string(cells) +
                              " cells exceeds grid width " + std::to_string(f.grid_w()) +
                              "; width not cropped");
  }
  result.sample = crop_grid(sample, y0, x0, rows, cols, patch_size);
  if (rng.bernoulli(config.flip_prob)) result.sample = flip_horizontal(result.sample);
  return result;
}

FeatureStandardizer fit_standardizer(std::size_t count,
                                     const std::function<FeatureMap(std::size_t)>& load) {
  std::vector<double> sum, sq;
  double n = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const FeatureMap f = load(i);
    const std::size_t z = f.dim();
    if (sum.empty()) {
      sum.assign(z, 0.0);
      sq.assign(z, 0.0);
    }
    const auto data = f.data.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      sum[k % z] += data[k];
      sq[k % z] += static_cast<double>(data[k]) * data[k];
    }
    n += static_cast<double>(f.grid_h() * f.grid_w());
  }
  FeatureStandardizer s;
  for (std::size_t d = 0; d < sum.size(); ++d) {
    const double mean = sum[d] / n;
    const double var = std::max(sq[d] / n - mean * mean, 0.0);
    s.mean.push_back(static_cast<float>(mean));
    s.inv_std.push_back(static_cast<float>(1.0 / std::sqrt(var + 1e-12)));
  }
  return s;
}

TrainResult train(std::size_t sample_count, const std::function<ImageSample(std::size_t)>& load,
                  int patch_size, std::size_t feature_dim, std::size_t num_classes,
                  const TrainConfig& config) {
  config.validate(patch_size);
  if (sample_count == 0) throw std::invalid_argument("train: no samples");

  TrainResult result;
  result.params = ProbeParams::zeros(feature_dim, num_classes);
  if (config.standardize) {
    result.params.standardizer =
        fit_standardizer(sample_count, [&](std::size_t i) { return load(i).features; });
  }
  ProbeParams& params = result.params;
  Tensor velocity_w({feature_dim, num_classes});
  std::vector<float> velocity_b(num_classes, 0.0f);

  Rng shuffle_rng(derive_seed(config.seed, Stream::Shuffle));
  std::vector<std::size_t> order(sample_count);
  std::size_t cursor = sample_count;
  auto next_index = [&]() {
    if (cursor == sample_count) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = sample_count; i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      }
      cursor = 0;
    }
    return order[cursor++];
  };

  const auto batch = static_cast<std::size_t>(config.batch_size);
  const auto lr = static_cast<float>(config.learning_rate);
  const auto mu = static_cast<float>(config.momentum);
  const auto wd = static_cast<float>(config.weight_decay);
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.workers), batch);
  std::vector<std::size_t> indices(batch);
  std::vector<ImageSample> assembled(batch);
  std::vector<std::vector<std::string>> slot_warnings(batch);
  std::map<std::string, bool> warned;

  for (int it = 0; it < config.iterations; ++it) {
    for (auto& idx : indices) idx = next_index();
    // Each slot's work is fixed by (iteration, slot), so the worker split
    // cannot change the batch.
    auto assemble = [&](std::size_t worker) {
      for (std::size_t slot = worker; slot < batch; slot += workers) {
        const auto aug_seed = derive_seed(config.seed, Stream::Augment,
                                          static_cast<std::uint64_t>(it) * batch + slot);
        auto r = augment(load(indices[slot]), config, patch_size, aug_seed);
        assembled[slot] = std::move(r.sample);
        slot_warnings[slot] = std::move(r.warnings);
      }
    };
    if (workers > 1) {
      std::vector<std::jthread> pool;
      for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(assemble, w);
      assemble(0);
    } else {
      assemble(0);
    }
    for (auto& ws : slot_warnings) {
      for (auto& w : ws) {
        if (warned.emplace(w, true).second) result.warnings.push_back(w);
      }
    }

    const auto g = loss_and_grad(params, std::span<const ImageSample>(assembled),
                                 config.loss_options());
    result.unsupervised_samples += g.unsupervised_samples;
    result.loss_history.push_back(g.loss);

    auto w = params.weight.data();
    auto vw = velocity_w.data();
    const auto gw = g.weight.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vw[i] = mu * vw[i] + gw[i] + wd * w[i];
      w[i] -= lr * vw[i];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
      velocity_b[k] = mu * velocity_b[k] + g.bias[k];
      params.bias[k] -= lr * velocity_b[k];
    }
    params.weight.require_finite("probe weight after SGD step");
  }
  return result;
}

TrainResult train(std::span<const ImageSample> samples, int patch_size, std::size_t num_classes,
                  const TrainConfig& config) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  for (const auto& s : samples) {
    if (!s.labels) {
      throw std::invalid_argument("train: sample '" + s.features.image_id + "' has no labels");
    }
  }
  return train(
      samples.size(), [&](std::size_t i) { return samples[i]; }, patch_size,
      samples.front().features.dim(), num_classes, config);
}

TrainResult train(const FeatureStore& store, std::span<const std::string> image_ids,
                  const TrainConfig& config) {
  const auto& m = store.manifest();
  std::size_t footprint = 0;
  for (const auto& id : image_ids) {
    const SampleEntry* e = m.find(id);
    if (!e) throw StoreError(StoreError::Kind::UnknownId, "train: unknown image_id '" + id + "'");
    if (!e->mask_path) {
      throw StoreError(StoreError::Kind::Precondition,
                       "train: sample '" + id + "' has no labels");
    }
    footprint += e->grid_h * e->grid_w * static_cast<std::size_t>(m.feature_dim) * 4 +
                 e->image_h * e->image_w;
  }
  const bool cache_all = footprint <= config.cache_mb * 1024 * 1024;
  std::vector<std::optional<ImageSample>> cache(cache_all ? image_ids.size() : 0);
  std::mutex cache_mutex;
  auto load = [&](std::size_t i) -> ImageSample {
    if (!cache_all) return store.load_sample(image_ids[i]);
    {
      std::lock_guard lock(cache_mutex);
      if (cache[i]) return *cache[i];
    }
    ImageSample s = store.load_sample(image_ids[i]);
    std::lock_guard lock(cache_mutex);
    if (!cache[i]) cache[i] = s;
    return s;
  };
  return train(image_ids.size(), load, m.patch_size, static_cast<std::size_t>(m.feature_dim),
               static_cast<std::size_t>(m.num_classes), config);
}

}  // namespace segprobe
