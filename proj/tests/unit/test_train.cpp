#include <doctest.h>

#include <fstream>
#include <numeric>

#include "oracles.hpp"
#include "segprobe/checkpoint.hpp"
#include "segprobe/error.hpp"
#include "segprobe/eval.hpp"
#include "segprobe/synthetic.hpp"
#include "segprobe/train.hpp"

using namespace segprobe;

namespace {

std::vector<ImageSample> toy_samples(int images, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.images = images;
  spec.grid = 6;
  spec.dim = 8;
  spec.classes = 3;
  spec.regions = 4;
  spec.seed = seed;
  std::vector<ImageSample> out;
  for (int i = 0; i < images; ++i) out.push_back(make_synthetic_sample(spec, i));
  return out;
}

TrainConfig quick(int iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.batch_size = 4;
  c.crop_pixels = 56;
  c.learning_rate = 0.5;
  return c;
}

}  // namespace

TEST_CASE("defaults match the reference recipe") {
  const TrainConfig c;
  CHECK(c.learning_rate == 0.001);
  CHECK(c.iterations == 20000);
  CHECK(c.batch_size == 10);
  CHECK(c.crop_pixels == 448);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 0.0);
  CHECK(c.flip_prob == 0.5);
  CHECK(c.normalization == Normalization::LabeledCount);
  CHECK(c.loss_head == LossHead::Softmax);
  CHECK_NOTHROW(c.validate(14));
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("config invariants are enforced") {
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.learning_rate = 0; }).validate(14), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.iterations = 0; }).validate(14), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(14), std::invalid_argument);
  CHECK_THROWS_AS(bad([](TrainConfig& c) { c.crop_pixels = 450; }).validate(14), std::invalid_argument);
  CHECK_NOTHROW(bad([](TrainConfig& c) { c.crop_pixels = 450; }).validate(15));
}

TEST_CASE("augmentation: flip involution, full crop identity, histogram invariance") {
  const auto s = toy_samples(1, 3).front();
  CHECK(flip_horizontal(flip_horizontal(s)) == s);
  CHECK(crop_grid(s, 0, 0, 6, 6, 14) == s);
  CHECK(flip_horizontal(s).labels->class_histogram() == s.labels->class_histogram());

  const auto c = crop_grid(s, 1, 2, 3, 4, 14);
  CHECK(c.features.grid_h() == 3);
  CHECK(c.features.grid_w() == 4);
  CHECK(c.labels->h() == 42);
  CHECK(c.labels->w() == 56);
  CHECK(c.labels->at(0, 0) == s.labels->at(14, 28));
  CHECK(c.features.data(0, 0, 0) == s.features.data(1, 2, 0));

  TrainConfig cfg;
  cfg.crop_pixels = 28;
  const auto a1 = augment(s, cfg, 14, 99), a2 = augment(s, cfg, 14, 99);
  CHECK(a1.sample == a2.sample);
  CHECK(a1.warnings.empty());
  CHECK(a1.sample.features.grid_h() == 2);

  cfg.crop_pixels = 140;
  const auto big = augment(s, cfg, 14, 5);
  CHECK(big.warnings.size() == 2);
  CHECK(big.sample.features.grid_h() == 6);
}

TEST_CASE("separable store reaches near-perfect training accuracy") {
  // Default toy geometry: 16x16 grid, 32 dims, 4 classes, noise 0.1. The
  // default step size is tuned for 20k iterations, so a larger one is used
  // to converge within 500.
  SyntheticSpec spec;
  spec.images = 8;
  spec.seed = 1;
  std::vector<ImageSample> samples;
  for (int i = 0; i < spec.images; ++i) samples.push_back(make_synthetic_sample(spec, i));
  TrainConfig c;
  c.iterations = 500;
  c.batch_size = 4;
  c.crop_pixels = 224;
  c.learning_rate = 0.1;
  const auto r = train(std::span<const ImageSample>(samples), 14, 4, c);
  std::size_t correct = 0, total = 0;
  for (const auto& s : samples) {
    const auto out = forward(s.features, r.params);
    for (std::size_t i = 0; i < s.labels->size(); ++i) {
      correct += out.argmax_map[i] == (*s.labels)[i];
      ++total;
    }
  }
  CHECK(double(correct) / double(total) > 0.99);
  auto smooth = [&](std::size_t end) {
    return std::accumulate(r.loss_history.begin() + static_cast<long>(end - 50),
                           r.loss_history.begin() + static_cast<long>(end), 0.0) / 50.0;
  };
  CHECK(smooth(500) < smooth(50));
}

TEST_CASE("vanishing learning rate leaves parameters at zero") {
  const auto samples = toy_samples(3, 2);
  auto c = quick(20);
  c.learning_rate = 1e-30;
  const auto r = train(std::span<const ImageSample>(samples), 14, 3, c);
  for (float v : r.params.weight.data()) CHECK(std::abs(v) < 1e-20f);
  CHECK(r.loss_history.front() == doctest::Approx(r.loss_history.back()).epsilon(1e-6));
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const auto samples = toy_samples(7, 4);
  auto c = quick(30);
  c.seed = 123;
  const auto a = train(std::span<const ImageSample>(samples), 14, 3, c);
  const auto b = train(std::span<const ImageSample>(samples), 14, 3, c);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.params == b.params);
  c.workers = 3;
  const auto m = train(std::span<const ImageSample>(samples), 14, 3, c);
  CHECK(m.loss_history == a.loss_history);
  CHECK(m.params == a.params);
  c.workers = 1;
  c.seed = 124;
  CHECK(train(std::span<const ImageSample>(samples), 14, 3, c).loss_history != a.loss_history);
}

TEST_CASE("training leaves its input samples untouched") {
  const auto samples = toy_samples(4, 5);
  const auto copy = samples;
  train(std::span<const ImageSample>(samples), 14, 3, quick(10));
  CHECK(samples == copy);
}

TEST_CASE("store-backed training rejects bad ids before iterating") {
  const auto dir = oracle::scratch_dir("train_store");
  SyntheticSpec spec;
  spec.images = 3;
  spec.grid = 4;
  spec.dim = 6;
  spec.classes = 3;
  auto store = make_synthetic_store(dir, spec);
  auto s = make_synthetic_sample(spec, 7);
  s.features.image_id = "unlabeled";
  s.labels.reset();
  store.write_sample(s);
  auto c = quick(5);
  const std::vector<std::string> unknown{"img_0000", "missing"};
  CHECK_THROWS_AS(train(store, unknown, c), StoreError);
  const std::vector<std::string> unlabeled{"img_0000", "unlabeled"};
  try {
    train(store, unlabeled, c);
    FAIL("expected rejection");
  } catch (const StoreError& e) {
    CHECK(std::string(e.what()).find("unlabeled") != std::string::npos);
  }
  const std::vector<std::string> ok{"img_0000", "img_0001", "img_0002"};
  const auto before = store.feature_hashes();
  const auto r = train(store, ok, c);
  CHECK(r.loss_history.size() == 5);
  CHECK(store.feature_hashes() == before);
}

TEST_CASE("standardization is fitted and carried by the params") {
  const auto samples = toy_samples(4, 6);
  auto c = quick(10);
  c.standardize = true;
  const auto r = train(std::span<const ImageSample>(samples), 14, 3, c);
  REQUIRE(r.params.standardizer.has_value());
  CHECK(r.params.standardizer->mean.size() == 8);
}

TEST_CASE("checkpoints round-trip bitwise") {
  const auto dir = oracle::scratch_dir("ckpt");
  Rng rng(3);
  Checkpoint ck{ProbeParams::zeros(5, 3), R"({"a":1})"};
  for (auto& v : ck.params.weight.data()) v = static_cast<float>(rng.normal());
  ck.params.bias = {0.5f, -1.0f, 2.0f};
  save_checkpoint(dir / "p.ckpt", ck);
  const auto back = load_checkpoint(dir / "p.ckpt");
  CHECK(back.params == ck.params);
  CHECK(back.metadata_json == ck.metadata_json);

  ck.params.standardizer = FeatureStandardizer{{1, 2, 3, 4, 5}, {1, 1, 1, 1, 0.5f}};
  save_checkpoint(dir / "s.ckpt", ck);
  CHECK(load_checkpoint(dir / "s.ckpt").params == ck.params);

  try {
    load_checkpoint(dir / "none.ckpt");
    FAIL("expected missing file");
  } catch (const StoreError& e) {
    CHECK(e.kind() == StoreError::Kind::MissingFile);
  }
  std::ofstream(dir / "junk.ckpt") << "SPCKjunk";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), StoreError);
}
