#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "segprobe/label_mask.hpp"
#include "segprobe/tensor.hpp"

namespace segprobe {

enum class Provenance { Gt, Scribble, Point, Noisy, ExternalPseudo };

std::string_view to_string(Provenance p);
/// Accepts "gt", "scribble", "point", "noisy", "external-pseudo".
std::optional<Provenance> parse_provenance(std::string_view s);

/// Frozen-backbone output for one image: a grid_h × grid_w × dim tensor.
struct FeatureMap {
  std::string image_id;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  Tensor data;

  std::size_t grid_h() const { return data.extent(0); }
  std::size_t grid_w() const { return data.extent(1); }
  std::size_t dim() const { return data.extent(2); }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct ImageSample {
  FeatureMap features;
  std::optional<LabelMask> labels;
  Provenance provenance = Provenance::Gt;

  /// Label dims must equal (image_h, image_w). Throws StoreError(Precondition).
  void validate() const;

  friend bool operator==(const ImageSample&, const ImageSample&) = default;
};

struct SampleEntry {
  std::string image_id;
  std::filesystem::path feature_path;  ///< relative to the store root
  std::optional<std::filesystem::path> mask_path;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  Provenance provenance = Provenance::Gt;
  // Filled from the feature header when the store is opened.
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

struct StoreManifest {
  int version = 1;
  int patch_size = 14;
  int feature_dim = 0;
  int num_classes = 0;
  int ignore_index = 255;
  std::vector<SampleEntry> samples;

  const SampleEntry* find(std::string_view image_id) const;
};

/// Test hook for fault injection during writes. Called with "features",
/// "mask" and "manifest" just before each file is committed.
struct WriteOptions {
  std::function<void(std::string_view stage)> on_stage;
};

/// One finding of verify_store.
struct VerifyEntry {
  std::string subject;  ///< file or sample the check concerns
  std::string check;
  bool ok = true;
  std::string message;
};

struct VerifyReport {
  std::vector<VerifyEntry> entries;
  bool ok() const;
};

/// A directory holding manifest.json plus NPY feature files and mask
/// rasters. Opening validates every header eagerly. Reads are thread-safe;
/// writes need exclusive access.
class FeatureStore {
 public:
  static constexpr const char* kManifestName = "manifest.json";

  /// `path` is either the store directory or its manifest file.
  static FeatureStore open(const std::filesystem::path& path);
  /// Creates an empty store; fails if a manifest already exists there.
  static FeatureStore create(const std::filesystem::path& dir, StoreManifest header);

  const StoreManifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path resolve(const std::filesystem::path& relative) const;

  ImageSample load_sample(std::string_view image_id) const;
  FeatureMap load_features(std::string_view image_id) const;

  /// Writes features (and mask, if any) then atomically replaces the
  /// manifest. Invalid samples are rejected before touching the disk.
  void write_sample(const ImageSample& sample, const WriteOptions& options = {});

  /// Adds a sample whose features live in `source` (referenced by relative
  /// path, never copied) with a new mask written into this store.
  void add_derived_sample(const FeatureStore& source, std::string_view image_id,
                          const LabelMask& labels, Provenance provenance,
                          const WriteOptions& options = {});

  /// image_id → SHA-256 of its feature file.
  std::map<std::string, std::string> feature_hashes() const;
  /// Hash over manifest header, sample ids and feature/mask file hashes.
  std::string content_hash() const;

 private:
  FeatureStore(std::filesystem::path root, StoreManifest manifest)
      : root_(std::move(root)), manifest_(std::move(manifest)) {}

  void commit_manifest(const WriteOptions& options) const;

  std::filesystem::path root_;
  StoreManifest manifest_;
};

/// Runs open-time validations plus a per-file payload audit, collecting every
/// failure instead of stopping at the first.
VerifyReport verify_store(const std::filesystem::path& path);

}  // namespace segprobe
