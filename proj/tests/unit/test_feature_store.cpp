#include <doctest.h>

#include <json.hpp>

#include <fstream>

#include "oracles.hpp"
#include "segprobe/error.hpp"
#include "segprobe/feature_store.hpp"
#include "segprobe/hash.hpp"
#include "segprobe/npy.hpp"

using namespace segprobe;
namespace fs = std::filesystem;

namespace {

StoreManifest header(int dim = 4, int classes = 3) {
  StoreManifest m;
  m.patch_size = 14;
  m.feature_dim = dim;
  m.num_classes = classes;
  return m;
}

ImageSample sample(const std::string& id, std::uint64_t seed, bool with_labels = true) {
  Rng rng(seed);
  ImageSample s = oracle::random_sample(rng, 2, 3, 4, 3, 28, 42, 0.3);
  s.features.image_id = id;
  if (!with_labels) s.labels.reset();
  return s;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

StoreError::Kind open_error_kind(const fs::path& p) {
  try {
    FeatureStore::open(p);
  } catch (const StoreError& e) {
    return e.kind();
  }
  FAIL("open succeeded");
  return StoreError::Kind::Io;
}

}  // namespace

TEST_CASE("write then load round-trips bitwise") {
  const auto dir = oracle::scratch_dir("store_rt");
  auto store = FeatureStore::create(dir, header());
  const auto a = sample("a", 1), b = sample("b", 2, false);
  store.write_sample(a);
  store.write_sample(b);

  const auto reopened = FeatureStore::open(dir / "manifest.json");
  REQUIRE(reopened.manifest().samples.size() == 2);
  CHECK(reopened.load_sample("a") == a);
  const auto lb = reopened.load_sample("b");
  CHECK_FALSE(lb.labels.has_value());
  CHECK(lb.features == b.features);
  CHECK(FeatureStore::open(dir).manifest().samples.size() == 2);
  CHECK(verify_store(dir).ok());
}

TEST_CASE("NPY files carry the exact little-endian float32 header") {
  const auto dir = oracle::scratch_dir("npy");
  Tensor t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.25f;
  npy::write_f32(dir / "x.npy", t);
  std::ifstream in(dir / "x.npy", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.substr(0, 6) == "\x93NUMPY");
  CHECK(bytes[6] == 1);
  CHECK(bytes[7] == 0);
  const auto header_len = static_cast<unsigned char>(bytes[8]) + 256u * static_cast<unsigned char>(bytes[9]);
  CHECK((10 + header_len) % 64 == 0);
  const std::string hdr = bytes.substr(10, header_len);
  CHECK(hdr.find("'descr': '<f4'") != std::string::npos);
  CHECK(hdr.find("'fortran_order': False") != std::string::npos);
  CHECK(hdr.find("'shape': (2, 3, 4)") != std::string::npos);
  CHECK(bytes.size() == 10 + header_len + t.size() * 4);
  CHECK(npy::read_f32(dir / "x.npy") == t);
}

TEST_CASE("manifest validation errors are distinct") {
  const auto dir = oracle::scratch_dir("store_err");
  {
    auto store = FeatureStore::create(dir, header());
    store.write_sample(sample("a", 1));
    store.write_sample(sample("b", 2));
    store.write_sample(sample("c", 3));
  }
  CHECK(FeatureStore::open(dir).manifest().samples.size() == 3);
  const auto good = read_json(dir / "manifest.json");

  SUBCASE("missing manifest") {
    CHECK(open_error_kind(dir / "nope.json") == StoreError::Kind::MissingFile);
  }
  SUBCASE("duplicate id") {
    auto j = good;
    j["samples"][1]["image_id"] = "a";
    write_json(dir / "manifest.json", j);
    CHECK(open_error_kind(dir) == StoreError::Kind::DuplicateId);
  }
  SUBCASE("schema violation") {
    auto j = good;
    j.erase("feature_dim");
    write_json(dir / "manifest.json", j);
    CHECK(open_error_kind(dir) == StoreError::Kind::Schema);
    j = good;
    j["ignore_index"] = 1;
    write_json(dir / "manifest.json", j);
    CHECK(open_error_kind(dir) == StoreError::Kind::Schema);
    std::ofstream(dir / "manifest.json") << "{ not json";
    CHECK(open_error_kind(dir) == StoreError::Kind::Schema);
  }
  SUBCASE("declared dim differs from a feature file") {
    auto j = good;
    j["feature_dim"] = 5;
    write_json(dir / "manifest.json", j);
    try {
      FeatureStore::open(dir);
      FAIL("expected an error");
    } catch (const StoreError& e) {
      CHECK(e.kind() == StoreError::Kind::DimensionMismatch);
      CHECK(std::string(e.what()).find("a.npy") != std::string::npos);
    }
  }
  SUBCASE("wrong dtype cites the expected layout") {
    const fs::path f = dir / "features" / "b.npy";
    std::fstream io(f, std::ios::in | std::ios::out | std::ios::binary);
    std::string head(128, '\0');
    io.read(head.data(), 128);
    const auto pos = head.find("<f4");
    REQUIRE(pos != std::string::npos);
    io.seekp(static_cast<std::streamoff>(pos + 2));
    io.put('8');
    io.close();
    try {
      FeatureStore::open(dir);
      FAIL("expected an error");
    } catch (const StoreError& e) {
      CHECK(e.kind() == StoreError::Kind::Decode);
      CHECK(std::string(e.what()).find("little-endian float32") != std::string::npos);
    }
    const auto report = verify_store(dir);
    CHECK_FALSE(report.ok());
  }
  SUBCASE("unknown id") {
    const auto store = FeatureStore::open(dir);
    CHECK_THROWS_AS(store.load_sample("zzz"), StoreError);
  }
}

TEST_CASE("verify_store reports every failure") {
  const auto dir = oracle::scratch_dir("store_verify");
  {
    auto store = FeatureStore::create(dir, header());
    store.write_sample(sample("a", 1));
    store.write_sample(sample("b", 2));
  }
  fs::remove(dir / "features" / "a.npy");
  fs::remove(dir / "masks" / "b.png");
  const auto report = verify_store(dir);
  CHECK_FALSE(report.ok());
  std::size_t failures = 0;
  for (const auto& e : report.entries) failures += e.ok ? 0 : 1;
  CHECK(failures >= 2);
}

TEST_CASE("invalid samples are rejected before touching the disk") {
  const auto dir = oracle::scratch_dir("store_pre");
  auto store = FeatureStore::create(dir, header());
  auto bad = sample("bad", 1);
  bad.labels = LabelMask(10, 10, 3, 0);
  CHECK_THROWS_AS(store.write_sample(bad), StoreError);
  CHECK_FALSE(fs::exists(dir / "features" / "bad.npy"));
  CHECK(FeatureStore::open(dir).manifest().samples.empty());

  auto wide = sample("wide", 2);
  wide.features.data = Tensor({2, 3, 5});
  CHECK_THROWS_AS(store.write_sample(wide), StoreError);
  store.write_sample(sample("ok", 3));
  CHECK_THROWS_AS(store.write_sample(sample("ok", 4)), StoreError);
}

TEST_CASE("interrupted writes leave the manifest parseable and without the sample") {
  for (const char* at : {"features", "mask", "manifest"}) {
    CAPTURE(at);
    const auto dir = oracle::scratch_dir("store_fault");
    auto store = FeatureStore::create(dir, header());
    store.write_sample(sample("first", 1));
    WriteOptions opts;
    opts.on_stage = [&](std::string_view stage) {
      if (stage == at) throw std::runtime_error("simulated crash");
    };
    CHECK_THROWS(store.write_sample(sample("second", 2), opts));
    const auto reopened = FeatureStore::open(dir);
    REQUIRE(reopened.manifest().samples.size() == 1);
    CHECK(reopened.manifest().samples[0].image_id == "first");
    CHECK(reopened.manifest().find("second") == nullptr);
  }
}

TEST_CASE("derived stores reference source features without copying") {
  const auto src_dir = oracle::scratch_dir("store_src");
  const auto dst_dir = oracle::scratch_dir("store_dst");
  auto src = FeatureStore::create(src_dir, header());
  const auto a = sample("a", 1);
  src.write_sample(a);
  auto dst = FeatureStore::create(dst_dir / "derived", header());
  LabelMask points(28, 42, 3);
  points.set(0, 0, 2);
  dst.add_derived_sample(src, "a", points, Provenance::Point);
  const auto reopened = FeatureStore::open(dst_dir / "derived");
  const auto s = reopened.load_sample("a");
  CHECK(s.features == a.features);
  CHECK(s.provenance == Provenance::Point);
  CHECK(s.labels->labeled_count() == 1);
  CHECK_FALSE(fs::exists(dst_dir / "derived" / "features"));
  CHECK(verify_store(dst_dir / "derived").ok());
}

TEST_CASE("provenance tags round-trip through text") {
  for (auto p : {Provenance::Gt, Provenance::Scribble, Provenance::Point, Provenance::Noisy,
                 Provenance::ExternalPseudo}) {
    CHECK(parse_provenance(to_string(p)) == p);
  }
  CHECK(parse_provenance("external-pseudo") == Provenance::ExternalPseudo);
  CHECK_FALSE(parse_provenance("dense").has_value());
}

TEST_CASE("hashes are stable and content sensitive") {
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto dir = oracle::scratch_dir("store_hash");
  auto store = FeatureStore::create(dir, header());
  store.write_sample(sample("a", 1));
  const auto h1 = store.content_hash();
  CHECK(FeatureStore::open(dir).content_hash() == h1);
  CHECK(store.feature_hashes().at("a") == sha256_file(dir / "features" / "a.npy"));
  store.write_sample(sample("b", 2));
  CHECK(store.content_hash() != h1);
}
