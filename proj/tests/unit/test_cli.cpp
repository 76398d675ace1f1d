#include <doctest.h>

#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "segprobe/checkpoint.hpp"
#include "segprobe/cli.hpp"
#include "segprobe/config_file.hpp"
#include "segprobe/feature_store.hpp"
#include "segprobe/hash.hpp"

using namespace segprobe;
namespace fs = std::filesystem;

namespace {

struct Captured {
  int code;
  std::string out;
  std::string err;
};

Captured run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

fs::path small_store(const fs::path& root, const std::string& noise = "0.1") {
  const auto dir = root / "store";
  REQUIRE(run_cli({"make-synthetic", "--out", dir.string(), "--images", "3", "--grid", "6", "--dim",
                   "8", "--classes", "3", "--regions", "4", "--noise", noise})
              .code == 0);
  return dir;
}

}  // namespace

TEST_CASE("config files parse flat keys, comments and a train table") {
  const auto dir = oracle::scratch_dir("cfg");
  std::ofstream(dir / "a.toml") << "# sweep\nlearning_rate = 0.01\n[train]\niterations = 7  # short\n"
                                   "normalization = \"eq1-literal\"\nstandardize = true\n";
  TrainConfig c;
  apply_config(c, read_config_file(dir / "a.toml"));
  CHECK(c.learning_rate == 0.01);
  CHECK(c.iterations == 7);
  CHECK(c.normalization == Normalization::Eq1Literal);
  CHECK(c.standardize);
  std::ofstream(dir / "b.toml") << "colour = 3\n";
  CHECK_THROWS_AS(apply_config(c, read_config_file(dir / "b.toml")), std::invalid_argument);
  std::ofstream(dir / "c.toml") << "iterations = many\n";
  CHECK_THROWS_AS(apply_config(c, read_config_file(dir / "c.toml")), std::invalid_argument);
}

TEST_CASE("train echoes the reference defaults") {
  const auto dir = oracle::scratch_dir("cli_defaults");
  const auto store = small_store(dir);
  const auto r = run_cli({"train", "--store", store.string(), "--print-config"});
  CHECK(r.code == 0);
  CHECK(r.out.find("lr=0.001") != std::string::npos);
  CHECK(r.out.find("iterations=20000") != std::string::npos);
  CHECK(r.out.find("batch=10") != std::string::npos);
  CHECK(r.out.find("crop=448") != std::string::npos);
}

TEST_CASE("flags override the config file") {
  const auto dir = oracle::scratch_dir("cli_override");
  const auto store = small_store(dir);
  std::ofstream(dir / "c.toml") << "iterations = 50\nlearning_rate = 0.2\n";
  const auto r = run_cli({"train", "--store", store.string(), "--config", (dir / "c.toml").string(),
                          "--iterations", "9", "--print-config"});
  CHECK(r.code == 0);
  CHECK(r.out.find("iterations=9") != std::string::npos);
  CHECK(r.out.find("lr=0.2") != std::string::npos);
}

TEST_CASE("train, eval and synth-labels pipeline") {
  // Near noise-free tokens so the probe can fit the pixel truth exactly.
  const auto dir = oracle::scratch_dir("cli_pipe");
  const auto store = small_store(dir, "0.02");
  const auto before = FeatureStore::open(store).content_hash();
  const auto t = run_cli({"train", "--store", store.string(), "--out", (dir / "run").string(),
                          "--iterations", "100", "--lr", "0.5", "--crop", "84",
                          "--labels-provenance", "gt"});
  REQUIRE(t.code == 0);
  CHECK(fs::exists(dir / "run" / "probe.ckpt"));
  CHECK(fs::exists(dir / "run" / "loss_history.csv"));
  const auto rec = read_json(dir / "run" / "run.json");
  CHECK(rec["subcommand"] == "train");
  CHECK(rec["config"]["iterations"] == 100);
  CHECK(rec["store_hash"] == before);
  CHECK(rec.contains("version"));
  CHECK(rec.contains("wall_clock_seconds"));
  CHECK(FeatureStore::open(store).content_hash() == before);
  const auto ck = load_checkpoint(dir / "run" / "probe.ckpt");
  CHECK(nlohmann::json::parse(ck.metadata_json)["labels_provenance"] == "gt");

  const auto e = run_cli({"eval", "--store", store.string(), "--checkpoint",
                          (dir / "run" / "probe.ckpt").string(), "--out", (dir / "eval").string()});
  REQUIRE(e.code == 0);
  const auto gt_report = read_json(dir / "eval" / "report.json");
  CHECK(gt_report["miou"].get<double>() > 0.99);
  CHECK(gt_report["evaluated_pixels"].get<std::int64_t>() == 3 * 84 * 84);
  CHECK(fs::exists(dir / "eval" / "report.csv"));

  const auto s = run_cli({"synth-labels", "--store", store.string(), "--out", (dir / "pts").string(),
                          "--regime", "point", "--k", "1", "--seed", "7"});
  REQUIRE(s.code == 0);
  const auto pts = FeatureStore::open(dir / "pts");
  CHECK(pts.manifest().samples.size() == 3);
  std::size_t points = 0;
  for (const auto& entry : pts.manifest().samples) {
    CHECK(entry.provenance == Provenance::Point);
    points += pts.load_sample(entry.image_id).labels->labeled_count();
  }
  CHECK(run_cli({"train", "--store", (dir / "pts").string(), "--out", (dir / "wrong").string(),
                 "--labels-provenance", "noisy", "--iterations", "1"})
            .code == cli::kData);
  CHECK(run_cli({"train", "--store", (dir / "pts").string(), "--out", (dir / "right").string(),
                 "--labels-provenance", "point", "--iterations", "1", "--crop", "84"})
            .code == cli::kOk);
  const auto pe = run_cli({"eval", "--store", (dir / "pts").string(), "--checkpoint",
                           (dir / "run" / "probe.ckpt").string(), "--out", (dir / "eval_pts").string()});
  REQUIRE(pe.code == 0);
  CHECK(read_json(dir / "eval_pts" / "report.json")["evaluated_pixels"].get<std::size_t>() == points);
}

TEST_CASE("noisy synthesis reports measured quality") {
  const auto dir = oracle::scratch_dir("cli_noisy");
  const auto store = small_store(dir);
  const auto r = run_cli({"synth-labels", "--store", store.string(), "--out", (dir / "noisy").string(),
                          "--regime", "noisy", "--target-quality", "70", "--seed", "3"});
  REQUIRE(r.code == 0);
  const auto rec = read_json(dir / "noisy" / "run.json");
  for (const auto& s : rec["details"]["samples"]) {
    CHECK(s["measured_miou_pct"].get<double>() >= 68.0);
    CHECK(s["measured_miou_pct"].get<double>() <= 72.0);
  }
  const double mean = rec["details"]["measured_quality_pct_mean"].get<double>();
  CHECK(mean >= 68.0);
  CHECK(mean <= 72.0);
}

TEST_CASE("exit codes") {
  const auto dir = oracle::scratch_dir("cli_codes");
  const auto store = small_store(dir);
  CHECK(run_cli({}).code == cli::kUsage);
  CHECK(run_cli({"--help"}).code == cli::kOk);
  CHECK(run_cli({"frobnicate"}).code == cli::kUsage);
  CHECK(run_cli({"synth-labels", "--store", store.string(), "--out", (dir / "x").string(),
                 "--regime", "bogus"})
            .code == cli::kUsage);
  CHECK(run_cli({"eval", "--store", store.string(), "--checkpoint", (dir / "none.ckpt").string(),
                 "--out", (dir / "e").string()})
            .code == cli::kData);
  CHECK(run_cli({"train", "--store", (dir / "nowhere").string(), "--out", (dir / "t").string()})
            .code == cli::kData);
  CHECK(run_cli({"train", "--store", store.string(), "--out", store.string(), "--iterations", "1"})
            .code == cli::kUsage);
  CHECK(run_cli({"train", "--store", store.string(), "--out", (dir / "t").string(), "--crop", "100"})
            .code == cli::kData);
  CHECK(run_cli({"train", "--store", store.string(), "--out", (dir / "t").string(),
                 "--labels-provenance", "rumour", "--iterations", "1"})
            .code == cli::kUsage);
  CHECK(run_cli({"cluster", "--store", store.string(), "--image-id", "img_0000", "--k", "0",
                 "--out", (dir / "c").string()})
            .code == cli::kData);
  CHECK(run_cli({"cluster", "--store", store.string(), "--image-id", "ghost", "--k", "2",
                 "--out", (dir / "c").string()})
            .code == cli::kData);
  CHECK(run_cli({"verify-store", "--store", store.string()}).code == cli::kOk);
  fs::remove(store / "features" / "img_0001.npy");
  CHECK(run_cli({"verify-store", "--store", store.string(), "--json"}).code == cli::kData);
}

TEST_CASE("cluster writes an indexed map and its summary") {
  const auto dir = oracle::scratch_dir("cli_cluster");
  const auto store = small_store(dir);
  const auto r = run_cli({"cluster", "--store", store.string(), "--image-id", "img_0002", "--k", "3",
                          "--seed", "4", "--out", (dir / "c").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "c" / "img_0002_clusters.png"));
  const auto j = read_json(dir / "c" / "img_0002_clusters.json");
  CHECK(j["k"] == 3);
  CHECK(j["assignments"].size() == 36);
  CHECK(read_json(dir / "c" / "run.json")["subcommand"] == "cluster");
}
