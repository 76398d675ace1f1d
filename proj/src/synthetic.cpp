#include "segprobe/synthetic.hpp"

#include <cstdio>
#include <stdexcept>
#include <vector>

#include "segprobe/rng.hpp"

namespace segprobe {

ImageSample make_synthetic_sample(const SyntheticSpec& spec, int index) {
  if (spec.dim < spec.classes || spec.classes < 1 || spec.grid < 1 || spec.patch < 1 ||
      spec.regions < 1) {
    throw std::invalid_argument("synthetic store: need dim >= classes >= 1 and positive sizes");
  }
  Rng rng(derive_seed(spec.seed, Stream::Data, static_cast<std::uint64_t>(index)));
  const auto grid = static_cast<std::size_t>(spec.grid);
  const auto patch = static_cast<std::size_t>(spec.patch);
  const std::size_t side = grid * patch;

  struct Site {
    double y, x;
    std::uint8_t label;
  };
  std::vector<Site> sites;
  for (int r = 0; r < spec.regions; ++r) {
    // The first sites cycle through the classes so every class appears.
    const auto label = static_cast<std::uint8_t>(
        r < spec.classes ? r : static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes))));
    sites.push_back({rng.uniform() * side, rng.uniform() * side, label});
  }
  // Each patch takes the class of the Voronoi site nearest its centre.
  const auto classes = static_cast<std::size_t>(spec.classes);
  std::vector<std::uint8_t> cell_class(grid * grid);
  Tensor onehot({grid, grid, classes});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const double cy = (static_cast<double>(gy) + 0.5) * static_cast<double>(patch);
      const double cx = (static_cast<double>(gx) + 0.5) * static_cast<double>(patch);
      double best = 1e300;
      std::uint8_t label = 0;
      for (const auto& s : sites) {
        const double d = (cy - s.y) * (cy - s.y) + (cx - s.x) * (cx - s.x);
        if (d < best) {
          best = d;
          label = s.label;
        }
      }
      cell_class[gy * grid + gx] = label;
      onehot(gy, gx, label) = 1.0f;
    }
  }
  // Pixel truth is the decision region of the noise-free class grid under
  // the probe's own upsampling, so a linear head can fit it exactly.
  const Tensor up = bilinear_resize(onehot, side, side);
  std::vector<std::uint8_t> values(side * side);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<std::uint8_t>(argmax(up.data().subspan(i * classes, classes)));
  }

  ImageSample sample;
  char id[32];
  std::snprintf(id, sizeof id, "img_%04d", index);
  sample.features.image_id = id;
  sample.features.image_h = side;
  sample.features.image_w = side;
  sample.features.data = Tensor({grid, grid, static_cast<std::size_t>(spec.dim)});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto tok = sample.features.data.row(gy, gx);
      for (auto& v : tok) v = static_cast<float>(spec.noise * rng.normal());
      tok[cell_class[gy * grid + gx]] += 1.0f;
    }
  }
  sample.labels = LabelMask(side, side, spec.classes, std::move(values));
  sample.provenance = Provenance::Gt;
  return sample;
}

FeatureStore make_synthetic_store(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  StoreManifest header;
  header.patch_size = spec.patch;
  header.feature_dim = spec.dim;
  header.num_classes = spec.classes;
  FeatureStore store = FeatureStore::create(dir, header);
  for (int i = 0; i < spec.images; ++i) store.write_sample(make_synthetic_sample(spec, i));
  return store;
}

}  // namespace segprobe
