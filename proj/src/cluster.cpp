#include "segprobe/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "segprobe/rng.hpp"

namespace segprobe {
namespace {

double sq_dist(std::span<const float> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

std::span<const float> token(const Tensor& t, std::size_t i) {
  return t.data().subspan(i * t.extent(1), t.extent(1));
}

std::span<const double> centroid(const TensorD& c, std::size_t j) {
  return c.data().subspan(j * c.extent(1), c.extent(1));
}

template <typename Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
  const auto t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1 || n < 2 * t) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + t - 1) / t;
  for (std::size_t w = 1; w < t; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

TensorD seed_plus_plus(const Tensor& tokens, std::size_t k, Rng& rng) {
  const std::size_t n = tokens.extent(0), dim = tokens.extent(1);
  TensorD centers({k, dim});
  std::vector<bool> chosen(n, false);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto take = [&](std::size_t j, std::size_t idx) {
    chosen[idx] = true;
    const auto src = token(tokens, idx);
    std::copy(src.begin(), src.end(), centers.data().begin() + static_cast<long>(j * dim));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(token(tokens, i), centroid(centers, j)));
    }
  };
  take(0, rng.below(n));
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > r) break;
      }
    } else {
      // All remaining mass is zero: draw uniformly among unchosen tokens.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      pick = free[rng.below(free.size())];
    }
    take(j, pick);
  }
  return centers;
}

}  // namespace

ClusterResult kmeans(const Tensor& tokens, int k, std::uint64_t seed,
                     const KMeansOptions& options) {
  if (tokens.rank() != 2) throw std::invalid_argument("kmeans: tokens must be N x dim");
  const std::size_t n = tokens.extent(0), dim = tokens.extent(1);
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " must be in [1, " +
                                std::to_string(n) + "]");
  }
  const auto kk = static_cast<std::size_t>(k);
  Rng rng(seed);
  ClusterResult r;
  r.centroids = seed_plus_plus(tokens, kk, rng);
  r.assignments.assign(n, 0);
  std::vector<double> dist(n, 0.0);

  auto assign = [&]() {
    bool changed = false;
    std::vector<char> flags(n, 0);
    parallel_chunks(n, options.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto x = token(tokens, i);
        std::uint32_t best = 0;
        double best_d = sq_dist(x, centroid(r.centroids, 0));
        for (std::size_t j = 1; j < kk; ++j) {
          const double d = sq_dist(x, centroid(r.centroids, j));
          if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(j);
          }
        }
        flags[i] = best != r.assignments[i];
        r.assignments[i] = best;
        dist[i] = best_d;
      }
    });
    for (char f : flags) changed |= (f != 0);
    return changed;
  };

  auto fix_empty = [&]() {
    std::vector<std::size_t> counts(kk, 0);
    for (auto a : r.assignments) ++counts[a];
    for (std::size_t j = 0; j < kk; ++j) {
      if (counts[j] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[r.assignments[i]] < 2) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) break;
      --counts[r.assignments[far]];
      r.assignments[far] = static_cast<std::uint32_t>(j);
      counts[j] = 1;
      dist[far] = 0.0;
    }
  };

  auto update = [&]() {
    std::vector<double> sums(kk * dim, 0.0);
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = r.assignments[i];
      ++counts[a];
      const auto x = token(tokens, i);
      for (std::size_t d = 0; d < dim; ++d) sums[a * dim + d] += x[d];
    }
    for (std::size_t j = 0; j < kk; ++j) {
      if (counts[j] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        r.centroids(j, d) = sums[j * dim + d] / static_cast<double>(counts[j]);
      }
    }
  };

  auto inertia = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += sq_dist(token(tokens, i), centroid(r.centroids, r.assignments[i]));
    }
    return s;
  };

  // The first assignment is forced: centroids come from seeding.
  assign();
  fix_empty();
  update();
  r.inertia = inertia();
  r.inertia_history.push_back(r.inertia);
  r.iterations_run = 1;

  while (r.iterations_run < options.max_iter) {
    const bool changed = assign();
    fix_empty();
    update();
    const double next = inertia();
    ++r.iterations_run;
    r.inertia_history.push_back(next);
    const double prev = r.inertia;
    r.inertia = next;
    if (!changed) break;
    if (prev > 0.0 && (prev - next) / prev < options.tol) break;
    if (prev == 0.0) break;
  }
  return r;
}

Tensor tokens_of(const FeatureMap& features, bool l2_normalize) {
  const std::size_t n = features.grid_h() * features.grid_w(), dim = features.dim();
  const auto src = features.data.data();
  Tensor out({n, dim}, std::vector<float>(src.begin(), src.end()));
  if (l2_normalize) {
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (std::size_t d = 0; d < dim; ++d) norm += static_cast<double>(out(i, d)) * out(i, d);
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) out(i, d) = static_cast<float>(out(i, d) / norm);
    }
  }
  return out;
}

ClusterMap cluster_map(const FeatureMap& features, int k, std::uint64_t seed,
                       const KMeansOptions& options, bool l2_normalize) {
  ClusterMap m;
  m.result = kmeans(tokens_of(features, l2_normalize), k, seed, options);
  m.grid_h = features.grid_h();
  m.grid_w = features.grid_w();
  if (k > 256) throw std::invalid_argument("cluster_map: at most 256 clusters can be rendered");
  m.rendered.h = features.image_h;
  m.rendered.w = features.image_w;
  m.rendered.pixels.resize(m.rendered.h * m.rendered.w);
  for (std::size_t y = 0; y < m.rendered.h; ++y) {
    const std::size_t gy = std::min(m.grid_h - 1, y * m.grid_h / m.rendered.h);
    for (std::size_t x = 0; x < m.rendered.w; ++x) {
      const std::size_t gx = std::min(m.grid_w - 1, x * m.grid_w / m.rendered.w);
      m.rendered.pixels[y * m.rendered.w + x] =
          static_cast<std::uint8_t>(m.result.assignments[gy * m.grid_w + gx]);
    }
  }
  return m;
}

std::vector<std::array<std::uint8_t, 3>> cluster_palette(std::size_t k) {
  std::vector<std::array<std::uint8_t, 3>> out;
  // Golden-angle hue walk in HSV at fixed saturation / value.
  for (std::size_t i = 0; i < k; ++i) {
    const double h = std::fmod(static_cast<double>(i) * 137.508, 360.0) / 60.0;
    const double s = 0.75, v = (i % 2 == 0) ? 0.95 : 0.7;
    const double c = v * s, x = c * (1 - std::abs(std::fmod(h, 2.0) - 1)), m = v - c;
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
      case 0: r = c; g = x; break;
      case 1: r = x; g = c; break;
      case 2: g = c; b = x; break;
      case 3: g = x; b = c; break;
      case 4: r = x; b = c; break;
      default: r = c; b = x; break;
    }
    out.push_back({static_cast<std::uint8_t>(std::lround((r + m) * 255)),
                   static_cast<std::uint8_t>(std::lround((g + m) * 255)),
                   static_cast<std::uint8_t>(std::lround((b + m) * 255))});
  }
  return out;
}

}  // namespace segprobe
