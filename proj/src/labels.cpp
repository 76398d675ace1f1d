#include "segprobe/labels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <sstream>
#include <stdexcept>

#include "segprobe/error.hpp"
#include "segprobe/eval.hpp"
#include "segprobe/rng.hpp"

namespace segprobe {
namespace {

constexpr std::array<std::array<int, 2>, 4> kDirs = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

// Flat index of the 4-neighbour in direction d, or false at the border.
bool step(const LabelMask& m, std::size_t i, int d, std::size_t& out) {
  const auto y = static_cast<long>(i / m.w()) + kDirs[d][0];
  const auto x = static_cast<long>(i % m.w()) + kDirs[d][1];
  if (y < 0 || x < 0 || y >= static_cast<long>(m.h()) || x >= static_cast<long>(m.w())) {
    return false;
  }
  out = static_cast<std::size_t>(y) * m.w() + static_cast<std::size_t>(x);
  return true;
}

void require_labeled(const LabelMask& gt, const char* who) {
  if (gt.labeled_count() == 0) {
    throw std::invalid_argument(std::string(who) + ": ground truth has no labeled pixels");
  }
}

}  // namespace

std::vector<Component> connected_components(const LabelMask& mask) {
  std::vector<Component> out;
  std::vector<bool> seen(mask.size(), false);
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (seen[s] || !mask.is_labeled(s)) continue;
    Component c;
    c.label = mask[s];
    c.min_y = c.max_y = s / mask.w();
    c.min_x = c.max_x = s % mask.w();
    seen[s] = true;
    queue.push_back(s);
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      c.pixels.push_back(i);
      c.min_y = std::min(c.min_y, i / mask.w());
      c.max_y = std::max(c.max_y, i / mask.w());
      c.min_x = std::min(c.min_x, i % mask.w());
      c.max_x = std::max(c.max_x, i % mask.w());
      for (int d = 0; d < 4; ++d) {
        std::size_t j;
        if (step(mask, i, d, j) && !seen[j] && mask[j] == c.label) {
          seen[j] = true;
          queue.push_back(j);
        }
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

LabelMask synth_points(const LabelMask& gt, int k_per_class, std::uint64_t seed) {
  if (k_per_class < 1) throw std::invalid_argument("synth_points: k_per_class must be >= 1");
  require_labeled(gt, "synth_points");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(gt.num_classes()));
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.is_labeled(i)) by_class[gt[i]].push_back(i);
  }
  LabelMask out(gt.h(), gt.w(), gt.num_classes(), gt.ignore_index(), gt.ignore_index());
  Rng rng(seed);
  for (auto& pixels : by_class) {
    const std::size_t take = std::min(pixels.size(), static_cast<std::size_t>(k_per_class));
    // Partial Fisher-Yates: the first `take` slots become a uniform sample.
    for (std::size_t j = 0; j < take; ++j) {
      const std::size_t r = j + static_cast<std::size_t>(rng.below(pixels.size() - j));
      std::swap(pixels[j], pixels[r]);
      out.set(pixels[j], gt[pixels[j]]);
    }
  }
  return out;
}

LabelMask synth_scribble(const LabelMask& gt, int thickness, double length_frac,
                         std::uint64_t seed) {
  if (thickness < 1) throw std::invalid_argument("synth_scribble: thickness must be >= 1");
  if (!(length_frac > 0.0 && length_frac <= 1.0)) {
    throw std::invalid_argument("synth_scribble: length_frac must be in (0, 1]");
  }
  require_labeled(gt, "synth_scribble");

  const auto comps = connected_components(gt);
  std::vector<std::size_t> owner(gt.size(), SIZE_MAX);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    for (auto i : comps[c].pixels) owner[i] = c;
  }
  LabelMask out(gt.h(), gt.w(), gt.num_classes(), gt.ignore_index(), gt.ignore_index());
  std::vector<bool> visited(gt.size(), false);
  Rng rng(seed);
  const long lo = -(thickness - 1) / 2;
  const long hi = thickness / 2;
  constexpr double kPersistence = 0.6;

  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto& comp = comps[c];
    const double bh = static_cast<double>(comp.max_y - comp.min_y + 1);
    const double bw = static_cast<double>(comp.max_x - comp.min_x + 1);
    const double diameter = std::sqrt(bh * bh + bw * bw);
    const auto length = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(length_frac * diameter)));

    std::vector<std::size_t> walk;
    std::size_t cur = comp.pixels[rng.below(comp.pixels.size())];
    int dir = static_cast<int>(rng.below(4));
    walk.push_back(cur);
    visited[cur] = true;
    while (walk.size() < length) {
      std::array<int, 4> open{};
      int n_open = 0;
      for (int d = 0; d < 4; ++d) {
        std::size_t j;
        if (step(gt, cur, d, j) && owner[j] == c && !visited[j]) open[n_open++] = d;
      }
      if (n_open == 0) break;
      const bool can_continue = std::find(open.begin(), open.begin() + n_open, dir) !=
                                open.begin() + n_open;
      if (!(can_continue && rng.bernoulli(kPersistence))) {
        dir = open[rng.below(static_cast<std::uint64_t>(n_open))];
      }
      step(gt, cur, dir, cur);
      visited[cur] = true;
      walk.push_back(cur);
    }

    for (auto p : walk) {
      const auto py = static_cast<long>(p / gt.w());
      const auto px = static_cast<long>(p % gt.w());
      for (long dy = lo; dy <= hi; ++dy) {
        for (long dx = lo; dx <= hi; ++dx) {
          const long y = py + dy, x = px + dx;
          if (y < 0 || x < 0 || y >= static_cast<long>(gt.h()) || x >= static_cast<long>(gt.w())) {
            continue;
          }
          const auto q = static_cast<std::size_t>(y) * gt.w() + static_cast<std::size_t>(x);
          if (owner[q] == c) out.set(q, gt[q]);
        }
      }
    }
  }
  return out;
}

namespace {

// Working state for synth_noisy: the candidate mask plus a live confusion
// matrix against gt so each corruption step is scored in O(changed + C²).
class NoisyCanvas {
 public:
  explicit NoisyCanvas(const LabelMask& gt)
      : gt_(gt), out_(dense_fill(gt)), report_(MetricReport::empty(gt.num_classes())) {
    accumulate(report_, out_, gt_);
  }

  const LabelMask& mask() const { return out_; }
  double miou_pct() const { return 100.0 * compute_iou(report_).miou; }

  void assign(std::size_t i, std::uint8_t v) {
    const std::uint8_t old = out_[i];
    if (old == v) return;
    journal_.push_back({i, old});
    recount(i, old, v);
    out_.set(i, v);
  }

  void commit() { journal_.clear(); }
  void rollback() {
    for (auto it = journal_.rbegin(); it != journal_.rend(); ++it) {
      recount(it->index, out_[it->index], it->previous);
      out_.set(it->index, it->previous);
    }
    journal_.clear();
  }

 private:
  struct Change {
    std::size_t index;
    std::uint8_t previous;
  };

  void recount(std::size_t i, std::uint8_t from, std::uint8_t to) {
    if (!gt_.is_labeled(i)) return;
    const auto c = static_cast<std::size_t>(report_.num_classes);
    --report_.confusion[gt_[i] * c + from];
    ++report_.confusion[gt_[i] * c + to];
  }

  // Ignore pixels take the label of the nearest labeled pixel (BFS order),
  // so the result supervises every pixel.
  static LabelMask dense_fill(const LabelMask& gt) {
    LabelMask out = gt;
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.is_labeled(i)) queue.push_back(i);
    }
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      for (int d = 0; d < 4; ++d) {
        std::size_t j;
        if (step(out, i, d, j) && !out.is_labeled(j)) {
          out.set(j, out[i]);
          queue.push_back(j);
        }
      }
    }
    return out;
  }

  const LabelMask& gt_;
  LabelMask out_;
  MetricReport report_;
  std::vector<Change> journal_;
};

template <typename Fn>
void for_disk(const LabelMask& m, std::size_t center, long radius, Fn&& fn) {
  const auto cy = static_cast<long>(center / m.w());
  const auto cx = static_cast<long>(center % m.w());
  for (long dy = -radius; dy <= radius; ++dy) {
    for (long dx = -radius; dx <= radius; ++dx) {
      if (dy * dy + dx * dx > radius * radius) continue;
      const long y = cy + dy, x = cx + dx;
      if (y < 0 || x < 0 || y >= static_cast<long>(m.h()) || x >= static_cast<long>(m.w())) {
        continue;
      }
      fn(static_cast<std::size_t>(y) * m.w() + static_cast<std::size_t>(x));
    }
  }
}

}  // namespace

LabelMask synth_noisy(const LabelMask& gt, double target_miou_pct, std::uint64_t seed,
                      const NoisyOptions& options) {
  if (!(target_miou_pct > 0.0 && target_miou_pct <= 100.0)) {
    throw std::invalid_argument("synth_noisy: target mIoU must be in (0, 100]");
  }
  require_labeled(gt, "synth_noisy");

  NoisyCanvas canvas(gt);
  const double lo = target_miou_pct - options.tolerance_pct;
  const double hi = target_miou_pct + options.tolerance_pct;
  // Aim for a quarter of the window so results sit near the target rather
  // than on the edge the corruption enters from.
  const double aim_lo = target_miou_pct - options.tolerance_pct / 4;
  const double aim_hi = target_miou_pct + options.tolerance_pct / 4;
  double current = canvas.miou_pct();
  if (current <= hi) return canvas.mask();

  std::vector<std::uint8_t> classes;
  const auto hist = gt.class_histogram();
  for (std::size_t k = 0; k < hist.size(); ++k) {
    if (hist[k] > 0) classes.push_back(static_cast<std::uint8_t>(k));
  }
  auto fail = [&](const std::string& why) {
    std::ostringstream msg;
    msg << "synth_noisy: cannot reach target " << target_miou_pct << " ± "
        << options.tolerance_pct << " (achieved " << current << "): " << why;
    return CalibrationError(current, msg.str());
  };
  if (classes.size() < 2) throw fail("fewer than two classes to confuse");

  Rng rng(seed);
  const LabelMask& m = canvas.mask();
  long max_radius = std::max<long>(2, static_cast<long>(std::min(m.h(), m.w())) / 8);
  auto other_class = [&](std::uint8_t avoid) {
    std::uint8_t v;
    do {
      v = classes[rng.below(classes.size())];
    } while (v == avoid);
    return v;
  };

  for (int it = 0; it < options.max_steps; ++it) {
    const long radius = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(max_radius)));
    const double op = rng.uniform();
    std::size_t p = rng.below(m.size());

    if (op < 0.5) {
      // Boundary shift: grow a neighbouring class into p's region.
      std::size_t nb = p;
      bool found = false;
      for (int tries = 0; tries < 64 && !found; ++tries) {
        for (int d = 0; d < 4; ++d) {
          std::size_t j;
          if (step(m, p, d, j) && m[j] != m[p]) {
            nb = j;
            found = true;
            break;
          }
        }
        if (!found) p = rng.below(m.size());
      }
      if (!found) continue;
      const std::uint8_t from = m[p], to = m[nb];
      for_disk(m, p, radius, [&](std::size_t q) {
        if (m[q] == from) canvas.assign(q, to);
      });
    } else if (op < 0.85) {
      // Blob confusion: a disk of the wrong class.
      const std::uint8_t to = other_class(m[p]);
      for_disk(m, p, radius, [&](std::size_t q) { canvas.assign(q, to); });
    } else {
      // Whole-region confusion: relabel the 4-connected region around p.
      const std::uint8_t from = m[p], to = other_class(from);
      std::vector<std::size_t> region{p};
      std::vector<bool> seen(m.size(), false);
      seen[p] = true;
      const std::size_t cap = static_cast<std::size_t>(max_radius * max_radius * 4);
      for (std::size_t k = 0; k < region.size() && region.size() <= cap; ++k) {
        for (int d = 0; d < 4; ++d) {
          std::size_t j;
          if (step(m, region[k], d, j) && !seen[j] && m[j] == from) {
            seen[j] = true;
            region.push_back(j);
          }
        }
      }
      if (region.size() > cap) continue;
      for (auto q : region) canvas.assign(q, to);
    }

    const double next = canvas.miou_pct();
    if (next < aim_lo) {
      canvas.rollback();
      max_radius = std::max<long>(1, max_radius / 2);
      continue;
    }
    canvas.commit();
    current = next;
    if (current <= aim_hi) return canvas.mask();
  }
  if (current >= lo && current <= hi) return canvas.mask();
  throw fail("step budget exhausted");
}

}  // namespace segprobe
