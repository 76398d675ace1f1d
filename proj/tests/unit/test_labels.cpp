#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "segprobe/error.hpp"
#include "segprobe/eval.hpp"
#include "segprobe/labels.hpp"
#include "segprobe/mask_io.hpp"

using namespace segprobe;
namespace fs = std::filesystem;

namespace {

// Horizontal bands of `classes` classes plus a disk of class 0 in the middle.
LabelMask banded(std::size_t h, std::size_t w, int classes) {
  LabelMask m(h, w, classes);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      m.set(y, x, static_cast<std::uint8_t>(y * static_cast<std::size_t>(classes) / h));
    }
  }
  return m;
}

LabelMask random_mask(Rng& rng, std::size_t h, std::size_t w, int classes, double ignore) {
  std::vector<std::uint8_t> v(h * w);
  for (auto& e : v) {
    e = rng.bernoulli(ignore) ? 255 : static_cast<std::uint8_t>(rng.below(static_cast<unsigned>(classes)));
  }
  return LabelMask(h, w, classes, std::move(v));
}

}  // namespace

TEST_CASE("label counting and validation") {
  CHECK(LabelMask(4, 4, 21).labeled_count() == 0);
  const LabelMask m(2, 2, 21, std::vector<std::uint8_t>{0, 1, 255, 1});
  CHECK(m.labeled_count() == 3);
  CHECK(m.class_histogram()[1] == 2);
  try {
    LabelMask(2, 3, 21, std::vector<std::uint8_t>{0, 1, 2, 3, 40, 5});
    FAIL("expected invalid label");
  } catch (const MaskError& e) {
    CHECK(e.kind() == MaskError::Kind::InvalidLabel);
    const std::string what = e.what();
    CHECK(what.find("40") != std::string::npos);
    CHECK(what.find("row 1") != std::string::npos);
    CHECK(what.find("col 1") != std::string::npos);
  }
}

TEST_CASE("masks round-trip through PNG and PGM") {
  const auto dir = oracle::scratch_dir("mask_io");
  Rng rng(4);
  const LabelMask m = random_mask(rng, 13, 17, 21, 0.2);
  save_mask(dir / "m.png", m);
  save_mask(dir / "m.pgm", m);
  CHECK(load_mask(dir / "m.png", 21) == m);
  CHECK(load_mask(dir / "m.pgm", 21) == m);
  CHECK(read_image_dims(dir / "m.png") == std::array<std::size_t, 2>{13, 17});
}

TEST_CASE("palette PNG is read by index") {
  const auto dir = oracle::scratch_dir("mask_pal");
  GrayImage img{3, 4, {0, 1, 2, 3, 3, 2, 1, 0, 0, 0, 1, 1}};
  const std::vector<std::array<std::uint8_t, 3>> palette{
      {0, 0, 0}, {128, 0, 0}, {0, 128, 0}, {128, 128, 0}};
  write_indexed_png(dir / "p.png", img, palette);
  const auto m = load_mask(dir / "p.png", 21);
  CHECK(std::vector<std::uint8_t>(m.values().begin(), m.values().end()) == img.pixels);
}

TEST_CASE("loading rejects out-of-range labels and unsupported formats") {
  const auto dir = oracle::scratch_dir("mask_bad");
  write_gray8(dir / "bad.png", GrayImage{1, 3, {0, 40, 255}});
  try {
    load_mask(dir / "bad.png", 21);
    FAIL("expected invalid label");
  } catch (const MaskError& e) {
    CHECK(e.kind() == MaskError::Kind::InvalidLabel);
  }
  std::ofstream(dir / "wide.pgm", std::ios::binary) << "P5\n1 1\n65535\n" << std::string(2, '\0');
  try {
    load_mask(dir / "wide.pgm", 21);
    FAIL("expected format error");
  } catch (const MaskError& e) {
    CHECK(e.kind() == MaskError::Kind::Format);
  }
  std::ofstream(dir / "junk.png", std::ios::binary) << "not an image";
  CHECK_THROWS_AS(load_mask(dir / "junk.png", 21), MaskError);
}

TEST_CASE("points: exact counts, subset fidelity, cap and determinism") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const LabelMask gt = random_mask(rng, 1 + rng.below(20), 1 + rng.below(20), 4, 0.3);
    if (gt.labeled_count() == 0) continue;
    const int k = 1 + static_cast<int>(rng.below(5));
    const LabelMask p = synth_points(gt, k, trial);
    const auto want = gt.class_histogram();
    const auto got = p.class_histogram();
    for (std::size_t c = 0; c < want.size(); ++c) {
      CHECK(got[c] == std::min<std::size_t>(want[c], static_cast<std::size_t>(k)));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.is_labeled(i)) CHECK(p[i] == gt[i]);
    }
    CHECK(synth_points(gt, k, trial) == p);
  }
  LabelMask two(4, 4, 4, 0);
  two.set(3, 3, 3);
  const auto p = synth_points(two, 1, 0);
  CHECK(p.labeled_count() == 2);
  CHECK(p.at(3, 3) == 3);
  CHECK(synth_points(two, 1000000000, 1) == two);
  CHECK_THROWS_AS(synth_points(two, 0, 1), std::invalid_argument);
}

TEST_CASE("scribbles stay inside their component") {
  Rng rng(2);
  const LabelMask gt = banded(40, 50, 3);
  const auto comps = connected_components(gt);
  for (int seed = 0; seed < 10; ++seed) {
    const LabelMask s = synth_scribble(gt, 3, 0.3, static_cast<std::uint64_t>(seed));
    CHECK(s.labeled_count() > 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.is_labeled(i)) CHECK(s[i] == gt[i]);
    }
    // Every component receives a scribble.
    for (const auto& c : comps) {
      bool hit = false;
      for (auto i : c.pixels) hit |= s.is_labeled(i);
      CHECK(hit);
    }
    CHECK(synth_scribble(gt, 3, 0.3, static_cast<std::uint64_t>(seed)) == s);
  }
  CHECK_THROWS_AS(synth_scribble(gt, 0, 0.3, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_scribble(gt, 3, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_scribble(gt, 3, 1.5, 1), std::invalid_argument);
}

TEST_CASE("scribble on a single-pixel component labels that pixel") {
  LabelMask gt(5, 5, 2, 0);
  gt.set(2, 2, 1);
  const auto s = synth_scribble(gt, 3, 0.3, 4);
  CHECK(s.at(2, 2) == 1);
}

TEST_CASE("scribble coverage of a disk is partial") {
  LabelMask disk(64, 64, 1);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if ((y - 31.5) * (y - 31.5) + (x - 31.5) * (x - 31.5) <= 30.0 * 30.0) {
        disk.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
      }
    }
  }
  const auto s = synth_scribble(disk, 3, 0.3, 7);
  const double frac = double(s.labeled_count()) / double(disk.labeled_count());
  CHECK(frac > 0.0);
  CHECK(frac < 0.5);
}

TEST_CASE("components use 4-connectivity") {
  // Diagonal neighbours are separate components.
  const LabelMask m(2, 2, 2, std::vector<std::uint8_t>{1, 0, 0, 1});
  const auto comps = connected_components(m);
  CHECK(comps.size() == 4);
}

TEST_CASE("noisy masks hit the requested quality") {
  const LabelMask gt = banded(128, 128, 3);
  CHECK(synth_noisy(gt, 100.0, 1) == gt);
  for (double target : {90.0, 80.0, 70.0, 60.0}) {
    CAPTURE(target);
    const LabelMask n = synth_noisy(gt, target, 3);
    CHECK(n.labeled_count() == gt.labeled_count());
    const double q = miou_percent(n, gt);
    CHECK(q >= target - 2.0);
    CHECK(q <= target + 2.0);
    CHECK(synth_noisy(gt, target, 3) == n);
  }
  CHECK_THROWS_AS(synth_noisy(gt, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_noisy(gt, 120.0, 1), std::invalid_argument);
}

TEST_CASE("unreachable noisy targets report the achieved quality") {
  const LabelMask one(16, 16, 1, 0);
  try {
    synth_noisy(one, 50.0, 1);
    FAIL("expected calibration failure");
  } catch (const CalibrationError& e) {
    CHECK(e.achieved_miou_pct() == doctest::Approx(100.0));
  }
}
