#include "segprobe/feature_store.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "segprobe/error.hpp"
#include "segprobe/hash.hpp"
#include "segprobe/mask_io.hpp"
#include "segprobe/npy.hpp"

namespace segprobe {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Gt: return "gt";
    case Provenance::Scribble: return "scribble";
    case Provenance::Point: return "point";
    case Provenance::Noisy: return "noisy";
    case Provenance::ExternalPseudo: return "external-pseudo";
  }
  return "gt";
}

std::optional<Provenance> parse_provenance(std::string_view s) {
  for (auto p : {Provenance::Gt, Provenance::Scribble, Provenance::Point, Provenance::Noisy,
                 Provenance::ExternalPseudo}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

void ImageSample::validate() const {
  const auto& f = features;
  if (f.data.rank() != 3) {
    throw StoreError(StoreError::Kind::Precondition,
                     "sample '" + f.image_id + "': features must be grid_h x grid_w x dim");
  }
  if (labels && (labels->h() != f.image_h || labels->w() != f.image_w)) {
    throw StoreError(StoreError::Kind::Precondition,
                     "sample '" + f.image_id + "': label dims " + std::to_string(labels->h()) +
                         "x" + std::to_string(labels->w()) + " != image dims " +
                         std::to_string(f.image_h) + "x" + std::to_string(f.image_w));
  }
}

const SampleEntry* StoreManifest::find(std::string_view image_id) const {
  for (const auto& s : samples) {
    if (s.image_id == image_id) return &s;
  }
  return nullptr;
}

bool VerifyReport::ok() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.ok; });
}

namespace {

using Reporter = std::function<void(const StoreError&)>;

StoreError schema_error(const std::string& msg) {
  return StoreError(StoreError::Kind::Schema, "manifest: " + msg);
}

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw schema_error(where + " missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw schema_error(where + " field '" + key + "' has the wrong type");
  }
}

json entry_to_json(const SampleEntry& e) {
  json j = {{"image_id", e.image_id},
            {"feature_path", e.feature_path.generic_string()},
            {"image_h", e.image_h},
            {"image_w", e.image_w},
            {"provenance", std::string(to_string(e.provenance))}};
  if (e.mask_path) j["mask_path"] = e.mask_path->generic_string();
  return j;
}

json manifest_to_json(const StoreManifest& m) {
  json samples = json::array();
  for (const auto& e : m.samples) samples.push_back(entry_to_json(e));
  return {{"version", m.version},         {"patch_size", m.patch_size},
          {"feature_dim", m.feature_dim}, {"num_classes", m.num_classes},
          {"ignore_index", m.ignore_index}, {"samples", samples}};
}

void check_header_fields(const StoreManifest& m) {
  if (m.version != 1) throw schema_error("unsupported version " + std::to_string(m.version));
  if (m.patch_size <= 0) throw schema_error("patch_size must be positive");
  if (m.feature_dim <= 0) throw schema_error("feature_dim must be positive");
  if (m.num_classes < 1 || m.num_classes > 255) throw schema_error("num_classes must be in [1, 255]");
  if (m.ignore_index < 0 || m.ignore_index > 255 || m.ignore_index < m.num_classes) {
    throw schema_error("ignore_index must be in [num_classes, 255]");
  }
}

StoreManifest parse_manifest(const json& j) {
  if (!j.is_object()) throw schema_error("top level must be an object");
  StoreManifest m;
  m.version = required<int>(j, "version", "header");
  m.patch_size = required<int>(j, "patch_size", "header");
  m.feature_dim = required<int>(j, "feature_dim", "header");
  m.num_classes = required<int>(j, "num_classes", "header");
  m.ignore_index = j.contains("ignore_index") ? required<int>(j, "ignore_index", "header") : 255;
  check_header_fields(m);
  if (!j.contains("samples") || !j.at("samples").is_array()) {
    throw schema_error("'samples' must be an array");
  }
  std::set<std::string> seen;
  std::size_t index = 0;
  for (const auto& s : j.at("samples")) {
    const std::string where = "sample #" + std::to_string(index++);
    if (!s.is_object()) throw schema_error(where + " is not an object");
    SampleEntry e;
    e.image_id = required<std::string>(s, "image_id", where);
    const std::string named = where + " ('" + e.image_id + "')";
    e.feature_path = required<std::string>(s, "feature_path", named);
    if (s.contains("mask_path") && !s.at("mask_path").is_null()) {
      e.mask_path = fs::path(required<std::string>(s, "mask_path", named));
    }
    e.image_h = required<std::size_t>(s, "image_h", named);
    e.image_w = required<std::size_t>(s, "image_w", named);
    if (e.image_h == 0 || e.image_w == 0) throw schema_error(named + " has zero image size");
    if (s.contains("provenance")) {
      const auto tag = required<std::string>(s, "provenance", named);
      const auto p = parse_provenance(tag);
      if (!p) throw schema_error(named + " has unknown provenance '" + tag + "'");
      e.provenance = *p;
    }
    if (!seen.insert(e.image_id).second) {
      throw StoreError(StoreError::Kind::DuplicateId,
                       "manifest: duplicate image_id '" + e.image_id + "'");
    }
    m.samples.push_back(std::move(e));
  }
  return m;
}

// Validates one sample's files against the manifest. Fills grid extents.
// Every failure is passed to `report`; the caller decides whether to stop.
void check_sample_files(const StoreManifest& m, const fs::path& root, SampleEntry& e,
                        const Reporter& report) {
  const fs::path feature_file = root / e.feature_path;
  const std::string who = "sample '" + e.image_id + "' (" + feature_file.string() + ")";
  if (!fs::exists(feature_file)) {
    report(StoreError(StoreError::Kind::MissingFile, who + ": feature file not found"));
    return;
  }
  npy::Header h;
  try {
    h = npy::read_header(feature_file);
  } catch (const StoreError& err) {
    report(StoreError(err.kind(), "sample '" + e.image_id + "': " + err.what()));
    return;
  }
  if (h.descr != "<f4" || h.fortran_order) {
    report(StoreError(StoreError::Kind::Decode,
                      who + ": dtype '" + h.descr +
                          "'; expected little-endian float32 ('<f4'), C-order"));
    return;
  }
  if (h.shape.size() != 3) {
    report(StoreError(StoreError::Kind::DimensionMismatch,
                      who + ": expected rank-3 (grid_h, grid_w, feature_dim) array"));
    return;
  }
  const std::size_t expected_bytes = h.data_offset + h.shape[0] * h.shape[1] * h.shape[2] * 4;
  if (fs::file_size(feature_file) < expected_bytes) {
    report(StoreError(StoreError::Kind::Decode, who + ": truncated payload (" +
                                                    std::to_string(fs::file_size(feature_file)) +
                                                    " bytes, need " +
                                                    std::to_string(expected_bytes) + ")"));
  }
  if (h.shape[2] != static_cast<std::size_t>(m.feature_dim)) {
    report(StoreError(StoreError::Kind::DimensionMismatch,
                      who + ": trailing extent " + std::to_string(h.shape[2]) +
                          " != manifest feature_dim " + std::to_string(m.feature_dim)));
  }
  e.grid_h = h.shape[0];
  e.grid_w = h.shape[1];
  const auto patch = static_cast<std::size_t>(m.patch_size);
  auto off = [&](std::size_t grid, std::size_t image) {
    const auto covered = grid * patch;
    return covered > image ? covered - image : image - covered;
  };
  if (e.grid_h == 0 || e.grid_w == 0 || off(e.grid_h, e.image_h) >= patch ||
      off(e.grid_w, e.image_w) >= patch) {
    report(StoreError(StoreError::Kind::DimensionMismatch,
                      who + ": grid " + std::to_string(e.grid_h) + "x" + std::to_string(e.grid_w) +
                          " inconsistent with image " + std::to_string(e.image_h) + "x" +
                          std::to_string(e.image_w) + " at patch size " + std::to_string(patch)));
  }
  if (e.mask_path) {
    const fs::path mask_file = root / *e.mask_path;
    if (!fs::exists(mask_file)) {
      report(StoreError(StoreError::Kind::MissingFile, "sample '" + e.image_id + "' (" +
                                                           mask_file.string() +
                                                           "): mask file not found"));
      return;
    }
    try {
      const auto dims = read_image_dims(mask_file);
      if (dims[0] != e.image_h || dims[1] != e.image_w) {
        report(StoreError(StoreError::Kind::DimensionMismatch,
                          "sample '" + e.image_id + "' (" + mask_file.string() + "): mask " +
                              std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                              " != image " + std::to_string(e.image_h) + "x" +
                              std::to_string(e.image_w)));
      }
    } catch (const MaskError& err) {
      report(StoreError(StoreError::Kind::Decode, "sample '" + e.image_id + "': " + err.what()));
    }
  }
}

fs::path manifest_path_for(const fs::path& path) {
  return fs::is_directory(path) ? path / FeatureStore::kManifestName : path;
}

json read_manifest_json(const fs::path& file) {
  if (!fs::exists(file)) {
    throw StoreError(StoreError::Kind::MissingFile, file.string() + ": manifest not found");
  }
  std::ifstream in(file);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw StoreError(StoreError::Kind::Schema, file.string() + ": invalid JSON: " + e.what());
  }
}

void write_atomically(const fs::path& target, const std::string& bytes) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError(StoreError::Kind::Io, tmp.string() + ": cannot open for writing");
    out << bytes;
    out.close();
    if (!out) throw StoreError(StoreError::Kind::Io, tmp.string() + ": write failed");
  }
  fs::rename(tmp, target);
}

std::string file_stem_for(std::string_view image_id) {
  std::string out(image_id);
  for (auto& c : out) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return out;
}

void stage(const WriteOptions& options, std::string_view name) {
  if (options.on_stage) options.on_stage(name);
}

}  // namespace

FeatureStore FeatureStore::open(const fs::path& path) {
  const fs::path file = manifest_path_for(path);
  StoreManifest m = parse_manifest(read_manifest_json(file));
  const fs::path root = file.parent_path().empty() ? fs::path(".") : file.parent_path();
  for (auto& e : m.samples) {
    check_sample_files(m, root, e, [](const StoreError& err) { throw err; });
  }
  return FeatureStore(root, std::move(m));
}

FeatureStore FeatureStore::create(const fs::path& dir, StoreManifest header) {
  header.samples.clear();
  check_header_fields(header);
  fs::create_directories(dir);
  if (fs::exists(dir / kManifestName)) {
    throw StoreError(StoreError::Kind::Precondition,
                     (dir / kManifestName).string() + ": store already exists");
  }
  FeatureStore store(dir, std::move(header));
  store.commit_manifest({});
  return store;
}

fs::path FeatureStore::resolve(const fs::path& relative) const { return root_ / relative; }

FeatureMap FeatureStore::load_features(std::string_view image_id) const {
  const SampleEntry* e = manifest_.find(image_id);
  if (!e) {
    throw StoreError(StoreError::Kind::UnknownId,
                     "unknown image_id '" + std::string(image_id) + "'");
  }
  FeatureMap f;
  f.image_id = e->image_id;
  f.image_h = e->image_h;
  f.image_w = e->image_w;
  f.data = npy::read_f32(resolve(e->feature_path));
  const std::vector<std::size_t> expected = {e->grid_h, e->grid_w,
                                             static_cast<std::size_t>(manifest_.feature_dim)};
  if (f.data.shape() != expected) {
    throw StoreError(StoreError::Kind::DimensionMismatch,
                     "sample '" + e->image_id + "': feature file shape changed since open");
  }
  return f;
}

ImageSample FeatureStore::load_sample(std::string_view image_id) const {
  ImageSample s;
  s.features = load_features(image_id);
  const SampleEntry& e = *manifest_.find(image_id);
  s.provenance = e.provenance;
  if (e.mask_path) {
    s.labels = load_mask(resolve(*e.mask_path), manifest_.num_classes,
                         static_cast<std::uint8_t>(manifest_.ignore_index));
  }
  return s;
}

void FeatureStore::commit_manifest(const WriteOptions& options) const {
  stage(options, "manifest");
  write_atomically(root_ / kManifestName, manifest_to_json(manifest_).dump(2) + "\n");
}

void FeatureStore::write_sample(const ImageSample& sample, const WriteOptions& options) {
  sample.validate();
  const auto& f = sample.features;
  const std::string& id = f.image_id;
  if (id.empty()) throw StoreError(StoreError::Kind::Precondition, "sample has empty image_id");
  if (manifest_.find(id)) {
    throw StoreError(StoreError::Kind::DuplicateId, "store already holds image_id '" + id + "'");
  }
  if (f.dim() != static_cast<std::size_t>(manifest_.feature_dim)) {
    throw StoreError(StoreError::Kind::DimensionMismatch,
                     "sample '" + id + "': feature dim " + std::to_string(f.dim()) +
                         " != store feature_dim " + std::to_string(manifest_.feature_dim));
  }
  if (sample.labels && (sample.labels->num_classes() != manifest_.num_classes ||
                        sample.labels->ignore_index() != manifest_.ignore_index)) {
    throw StoreError(StoreError::Kind::Precondition,
                     "sample '" + id + "': label class count/ignore index differ from store");
  }
  SampleEntry e;
  e.image_id = id;
  e.image_h = f.image_h;
  e.image_w = f.image_w;
  e.provenance = sample.provenance;
  e.grid_h = f.grid_h();
  e.grid_w = f.grid_w();
  e.feature_path = fs::path("features") / (file_stem_for(id) + ".npy");
  // Reject grid/image inconsistencies before writing anything.
  {
    const auto patch = static_cast<std::size_t>(manifest_.patch_size);
    auto off = [&](std::size_t grid, std::size_t image) {
      const auto covered = grid * patch;
      return covered > image ? covered - image : image - covered;
    };
    if (off(e.grid_h, e.image_h) >= patch || off(e.grid_w, e.image_w) >= patch) {
      throw StoreError(StoreError::Kind::DimensionMismatch,
                       "sample '" + id + "': grid inconsistent with image size");
    }
  }

  fs::create_directories(root_ / "features");
  {
    const fs::path target = resolve(e.feature_path);
    const fs::path tmp = target.string() + ".tmp";
    npy::write_f32(tmp, f.data);
    stage(options, "features");
    fs::rename(tmp, target);
  }
  if (sample.labels) {
    e.mask_path = fs::path("masks") / (file_stem_for(id) + ".png");
    fs::create_directories(root_ / "masks");
    const fs::path target = resolve(*e.mask_path);
    const fs::path tmp = target.string() + ".tmp";
    save_mask(tmp, *sample.labels);
    stage(options, "mask");
    fs::rename(tmp, target);
  }
  manifest_.samples.push_back(e);
  try {
    commit_manifest(options);
  } catch (...) {
    manifest_.samples.pop_back();
    throw;
  }
}

void FeatureStore::add_derived_sample(const FeatureStore& source, std::string_view image_id,
                                      const LabelMask& labels, Provenance provenance,
                                      const WriteOptions& options) {
  const SampleEntry* src = source.manifest().find(image_id);
  if (!src) {
    throw StoreError(StoreError::Kind::UnknownId,
                     "source store has no image_id '" + std::string(image_id) + "'");
  }
  if (manifest_.find(image_id)) {
    throw StoreError(StoreError::Kind::DuplicateId,
                     "store already holds image_id '" + std::string(image_id) + "'");
  }
  if (labels.h() != src->image_h || labels.w() != src->image_w) {
    throw StoreError(StoreError::Kind::Precondition,
                     "sample '" + src->image_id + "': label dims differ from image dims");
  }
  SampleEntry e = *src;
  e.provenance = provenance;
  e.feature_path = fs::relative(fs::absolute(source.resolve(src->feature_path)),
                                fs::absolute(root_));
  e.mask_path = fs::path("masks") / (file_stem_for(src->image_id) + ".png");
  fs::create_directories(root_ / "masks");
  const fs::path target = resolve(*e.mask_path);
  const fs::path tmp = target.string() + ".tmp";
  save_mask(tmp, labels);
  stage(options, "mask");
  fs::rename(tmp, target);
  manifest_.samples.push_back(e);
  try {
    commit_manifest(options);
  } catch (...) {
    manifest_.samples.pop_back();
    throw;
  }
}

std::map<std::string, std::string> FeatureStore::feature_hashes() const {
  std::map<std::string, std::string> out;
  for (const auto& e : manifest_.samples) out[e.image_id] = sha256_file(resolve(e.feature_path));
  return out;
}

std::string FeatureStore::content_hash() const {
  std::ostringstream text;
  text << "patch_size=" << manifest_.patch_size << ";feature_dim=" << manifest_.feature_dim
       << ";num_classes=" << manifest_.num_classes << ";ignore_index=" << manifest_.ignore_index
       << "\n";
  for (const auto& e : manifest_.samples) {
    text << e.image_id << '\t' << sha256_file(resolve(e.feature_path)) << '\t'
         << (e.mask_path ? sha256_file(resolve(*e.mask_path)) : std::string("-")) << '\t'
         << to_string(e.provenance) << '\n';
  }
  return sha256_hex(text.str());
}

VerifyReport verify_store(const fs::path& path) {
  VerifyReport report;
  const fs::path file = manifest_path_for(path);
  StoreManifest m;
  try {
    m = parse_manifest(read_manifest_json(file));
  } catch (const StoreError& e) {
    report.entries.push_back({file.string(), "manifest", false, e.what()});
    return report;
  }
  report.entries.push_back({file.string(), "manifest", true, "schema valid"});
  const fs::path root = file.parent_path().empty() ? fs::path(".") : file.parent_path();
  for (auto& e : m.samples) {
    bool sample_ok = true;
    check_sample_files(m, root, e, [&](const StoreError& err) {
      sample_ok = false;
      std::string check;
      switch (err.kind()) {
        case StoreError::Kind::MissingFile: check = "exists"; break;
        case StoreError::Kind::DimensionMismatch: check = "dimensions"; break;
        case StoreError::Kind::Decode: check = "format"; break;
        default: check = "io"; break;
      }
      report.entries.push_back({(root / e.feature_path).string(), check, false, err.what()});
    });
    if (!sample_ok) continue;
    // Full payload audit: decode and check every value is finite.
    try {
      const Tensor t = npy::read_f32(root / e.feature_path);
      if (!t.all_finite()) {
        report.entries.push_back(
            {(root / e.feature_path).string(), "finite", false, "non-finite feature values"});
        continue;
      }
      if (e.mask_path) load_mask(root / *e.mask_path, m.num_classes,
                                 static_cast<std::uint8_t>(m.ignore_index));
      report.entries.push_back({e.image_id, "sample", true, "ok"});
    } catch (const Error& err) {
      report.entries.push_back({(root / e.feature_path).string(), "payload", false, err.what()});
    }
  }
  return report;
}

}  // namespace segprobe
