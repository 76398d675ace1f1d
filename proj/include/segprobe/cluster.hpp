#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "segprobe/feature_store.hpp"
#include "segprobe/mask_io.hpp"
#include "segprobe/tensor.hpp"

namespace segprobe {

struct KMeansOptions {
  int max_iter = 300;
  double tol = 1e-6;
  /// Threads for the assignment step; the result does not depend on it.
  int threads = 1;
};

struct ClusterResult {
  std::vector<std::uint32_t> assignments;  ///< one per token, in [0, k)
  TensorD centroids;                       ///< k × dim
  double inertia = 0.0;
  int iterations_run = 0;
  /// Inertia after every Lloyd iteration (non-increasing).
  std::vector<double> inertia_history;
};

/// Lloyd's algorithm with k-means++ seeding over the rows of an N × dim
/// tensor. Stops at an assignment fixpoint, when the relative inertia change
/// drops below tol, or after max_iter iterations. An empty cluster takes the
/// token farthest from its current centroid. Throws std::invalid_argument
/// unless 1 <= k <= N.
ClusterResult kmeans(const Tensor& tokens, int k, std::uint64_t seed,
                     const KMeansOptions& options = {});

/// (grid_h·grid_w) × dim view of a feature map, optionally L2-normalized
/// per token.
Tensor tokens_of(const FeatureMap& features, bool l2_normalize = false);

struct ClusterMap {
  ClusterResult result;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  /// Cluster index per pixel, nearest-neighbour upsampled from the grid.
  GrayImage rendered;
};

ClusterMap cluster_map(const FeatureMap& features, int k, std::uint64_t seed,
                       const KMeansOptions& options = {}, bool l2_normalize = false);

/// Distinct, fixed colours for up to 256 clusters.
std::vector<std::array<std::uint8_t, 3>> cluster_palette(std::size_t k);

}  // namespace segprobe
