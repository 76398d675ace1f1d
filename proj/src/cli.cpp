#include "segprobe/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "segprobe/checkpoint.hpp"
#include "segprobe/cluster.hpp"
#include "segprobe/config_file.hpp"
#include "segprobe/error.hpp"
#include "segprobe/eval.hpp"
#include "segprobe/feature_store.hpp"
#include "segprobe/labels.hpp"
#include "segprobe/mask_io.hpp"
#include "segprobe/rng.hpp"
#include "segprobe/run_record.hpp"
#include "segprobe/synthetic.hpp"
#include "segprobe/train.hpp"

namespace segprobe::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stale or foreign artifacts are never overwritten silently, and an input
// store is never an output location.
void prepare_out_dir(const fs::path& out, const fs::path& store) {
  if (out.empty()) throw UsageError("--out is required");
  std::error_code ec;
  if (fs::exists(out) && fs::exists(store) && fs::equivalent(out, store, ec)) {
    throw UsageError("--out must differ from the input store");
  }
  fs::create_directories(out);
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string config_echo(const TrainConfig& c) {
  std::ostringstream s;
  s << "config: lr=" << c.learning_rate << " iterations=" << c.iterations
    << " batch=" << c.batch_size << " crop=" << c.crop_pixels << " momentum=" << c.momentum
    << " weight_decay=" << c.weight_decay << " flip=" << c.flip_prob
    << " normalization=" << to_string(c.normalization) << " loss_head=" << to_string(c.loss_head)
    << " seed=" << c.seed << " workers=" << c.workers
    << " standardize=" << (c.standardize ? "true" : "false");
  return s.str();
}

std::vector<std::string> select_ids(const FeatureStore& store, const std::vector<std::string>& ids) {
  if (!ids.empty()) return ids;
  std::vector<std::string> all;
  for (const auto& e : store.manifest().samples) all.push_back(e.image_id);
  return all;
}

// ---------------------------------------------------------------- synth-labels

struct SynthArgs {
  std::string store, out, regime;
  int k = 1;
  int thickness = 3;
  double length_frac = 0.3;
  double target = 70.0;
  double tolerance = 2.0;
  std::uint64_t seed = 0;
};

int cmd_synth_labels(const SynthArgs& a, RunRecord& rec) {
  const auto source = FeatureStore::open(a.store);
  if (fs::exists(fs::path(a.out) / FeatureStore::kManifestName)) {
    throw UsageError("output store already exists: " + a.out);
  }
  prepare_out_dir(a.out, source.root());
  Provenance prov;
  if (a.regime == "point") {
    prov = Provenance::Point;
    if (a.k < 1) throw UsageError("--k must be >= 1");
  } else if (a.regime == "scribble") {
    prov = Provenance::Scribble;
    if (a.thickness < 1 || a.length_frac <= 0) {
      throw UsageError("--thickness must be >= 1 and --length-frac > 0");
    }
  } else {
    prov = Provenance::Noisy;
    if (a.target <= 0 || a.target > 100) throw UsageError("--target-quality must be in (0, 100]");
  }

  StoreManifest header = source.manifest();
  header.samples.clear();
  auto out = FeatureStore::create(a.out, header);
  json per_sample = json::array();
  MetricReport aggregate = MetricReport::empty(header.num_classes);
  for (std::size_t i = 0; i < source.manifest().samples.size(); ++i) {
    const auto& entry = source.manifest().samples[i];
    const ImageSample s = source.load_sample(entry.image_id);
    if (!s.labels) {
      throw StoreError(StoreError::Kind::Precondition,
                       "sample '" + entry.image_id + "' has no mask to synthesize from");
    }
    const std::uint64_t seed = derive_seed(a.seed, Stream::Synth, i);
    LabelMask labels = [&] {
      switch (prov) {
        case Provenance::Point: return synth_points(*s.labels, a.k, seed);
        case Provenance::Scribble:
          return synth_scribble(*s.labels, a.thickness, a.length_frac, seed);
        default: return synth_noisy(*s.labels, a.target, seed, {a.tolerance, 200000});
      }
    }();
    json row = {{"image_id", entry.image_id}, {"labeled_pixels", labels.labeled_count()}};
    if (prov == Provenance::Noisy) {
      MetricReport r = MetricReport::empty(header.num_classes);
      accumulate(r, labels, *s.labels);
      finalize(r);
      row["measured_miou_pct"] = 100.0 * r.miou;
      aggregate = merge(aggregate, r);
    }
    per_sample.push_back(std::move(row));
    out.add_derived_sample(source, entry.image_id, labels, prov);
  }
  rec.details["regime"] = a.regime;
  rec.details["samples"] = per_sample;
  if (prov == Provenance::Noisy && !per_sample.empty()) {
    finalize(aggregate);
    double mean = 0.0;
    for (const auto& r : per_sample) mean += r["measured_miou_pct"].get<double>();
    rec.details["target_quality_pct"] = a.target;
    rec.details["measured_quality_pct_mean"] = mean / static_cast<double>(per_sample.size());
    rec.details["measured_quality_pct_pooled"] = 100.0 * aggregate.miou;
    std::cout << "measured quality: " << mean / static_cast<double>(per_sample.size())
              << "% mIoU (target " << a.target << "%)\n";
  }
  rec.config = {{"regime", a.regime}, {"k", a.k}, {"thickness", a.thickness},
                {"length_frac", a.length_frac}, {"target_quality", a.target},
                {"tolerance", a.tolerance}};
  rec.seeds = {{"root", a.seed}};
  rec.store_hash = source.content_hash();
  rec.outputs.push_back((fs::path(a.out) / FeatureStore::kManifestName).string());
  std::cout << "wrote " << source.manifest().samples.size() << " " << a.regime
            << " masks to " << a.out << "\n";
  return kOk;
}

// ----------------------------------------------------------------------- train

struct TrainArgs {
  std::string store, out, config_path, provenance;
  std::vector<std::string> ids;
  bool print_config = false;
  // Flag overrides; applied after the config file.
  std::map<std::string, std::string> overrides;
};

int cmd_train(const TrainArgs& a, RunRecord& rec) {
  TrainConfig config;
  if (!a.config_path.empty()) apply_config(config, read_config_file(a.config_path));
  apply_config(config, a.overrides);
  std::cout << config_echo(config) << "\n";
  if (a.print_config) return kOk;

  std::optional<Provenance> expected;
  if (!a.provenance.empty()) {
    expected = parse_provenance(a.provenance);
    if (!expected) throw UsageError("unknown --labels-provenance '" + a.provenance + "'");
  }
  const auto store = FeatureStore::open(a.store);
  config.validate(store.manifest().patch_size);
  prepare_out_dir(a.out, store.root());
  const auto ids = select_ids(store, a.ids);
  for (const auto& id : ids) {
    const SampleEntry* e = store.manifest().find(id);
    if (expected && e && e->provenance != *expected) {
      throw StoreError(StoreError::Kind::Precondition,
                       "sample '" + id + "' has provenance '" + std::string(to_string(e->provenance)) +
                           "', not '" + a.provenance + "'");
    }
  }

  const auto before = store.feature_hashes();
  const std::string store_hash = store.content_hash();
  TrainResult result = train(store, ids, config);
  if (store.feature_hashes() != before) {
    throw std::runtime_error("feature files changed during training");
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";

  json meta = {{"config", json::parse(config.to_json())},
               {"store_hash", store_hash},
               {"feature_dim", store.manifest().feature_dim},
               {"num_classes", store.manifest().num_classes},
               {"patch_size", store.manifest().patch_size},
               {"labels_provenance", a.provenance},
               {"image_ids", ids}};
  const fs::path out(a.out);
  save_checkpoint(out / "probe.ckpt", {result.params, meta.dump()});
  std::ostringstream hist;
  hist.precision(9);
  hist << "iteration,loss\n";
  for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
    hist << i + 1 << "," << result.loss_history[i] << "\n";
  }
  write_text(out / "loss_history.csv", hist.str());

  rec.config = json::parse(config.to_json());
  rec.seeds = {{"root", config.seed}, {"shuffle_stream", static_cast<int>(Stream::Shuffle)},
               {"augment_stream", static_cast<int>(Stream::Augment)}};
  rec.store_hash = store_hash;
  rec.outputs = {(out / "probe.ckpt").string(), (out / "loss_history.csv").string()};
  rec.details = {{"labels_provenance", a.provenance},
                 {"samples", ids.size()},
                 {"unsupervised_samples", result.unsupervised_samples},
                 {"final_loss", result.loss_history.empty() ? 0.0 : result.loss_history.back()},
                 {"warnings", result.warnings}};
  std::cout << "trained " << config.iterations << " iterations; final loss "
            << (result.loss_history.empty() ? 0.0 : result.loss_history.back()) << "\n";
  return kOk;
}

// ------------------------------------------------------------------------ eval

struct EvalArgs {
  std::string store, checkpoint, out;
  std::vector<std::string> ids;
};

int cmd_eval(const EvalArgs& a, RunRecord& rec) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto store = FeatureStore::open(a.store);
  prepare_out_dir(a.out, store.root());
  const auto& m = store.manifest();
  if (ck.params.dim() != static_cast<std::size_t>(m.feature_dim) ||
      ck.params.num_classes() != static_cast<std::size_t>(m.num_classes)) {
    throw StoreError(StoreError::Kind::DimensionMismatch,
                     "checkpoint is " + std::to_string(ck.params.dim()) + "x" +
                         std::to_string(ck.params.num_classes()) + " but store has dim " +
                         std::to_string(m.feature_dim) + " and " +
                         std::to_string(m.num_classes) + " classes");
  }
  MetricReport report = MetricReport::empty(m.num_classes);
  std::size_t skipped = 0;
  for (const auto& id : select_ids(store, a.ids)) {
    const ImageSample s = store.load_sample(id);
    if (!s.labels) {
      ++skipped;
      continue;
    }
    accumulate(report, forward(s.features, ck.params).argmax_map, *s.labels);
  }
  finalize(report);  // throws MetricError when nothing was evaluated
  const fs::path out(a.out);
  write_text(out / "report.json", report_to_json(report));
  write_text(out / "report.csv", report_to_csv(report));
  rec.store_hash = store.content_hash();
  rec.outputs = {(out / "report.json").string(), (out / "report.csv").string()};
  rec.details = {{"checkpoint", a.checkpoint},
                 {"miou", report.miou},
                 {"evaluated_pixels", report.evaluated_pixels},
                 {"skipped_unlabeled_samples", skipped}};
  std::cout << "mIoU: " << 100.0 * report.miou << "% over " << report.evaluated_pixels
            << " pixels\n";
  return kOk;
}

// --------------------------------------------------------------------- cluster

struct ClusterArgs {
  std::string store, image_id, out;
  int k = 5;
  std::uint64_t seed = 0;
  KMeansOptions options;
  bool l2 = false;
};

int cmd_cluster(const ClusterArgs& a, RunRecord& rec) {
  const auto store = FeatureStore::open(a.store);
  const FeatureMap f = store.load_features(a.image_id);
  prepare_out_dir(a.out, store.root());
  const std::uint64_t seed = derive_seed(a.seed, Stream::Cluster, 0);
  const ClusterMap map = cluster_map(f, a.k, seed, a.options, a.l2);
  const fs::path out(a.out);
  const fs::path png = out / (a.image_id + "_clusters.png");
  const fs::path js = out / (a.image_id + "_clusters.json");
  write_indexed_png(png, map.rendered, cluster_palette(static_cast<std::size_t>(a.k)));
  json j = {{"image_id", a.image_id},
            {"k", a.k},
            {"seed", a.seed},
            {"l2_normalize", a.l2},
            {"grid_h", map.grid_h},
            {"grid_w", map.grid_w},
            {"inertia", map.result.inertia},
            {"iterations_run", map.result.iterations_run},
            {"inertia_history", map.result.inertia_history},
            {"assignments", map.result.assignments}};
  write_text(js, j.dump(2) + "\n");
  rec.config = {{"k", a.k}, {"max_iter", a.options.max_iter}, {"tol", a.options.tol},
                {"l2_normalize", a.l2}, {"threads", a.options.threads}};
  rec.seeds = {{"root", a.seed}, {"cluster_stream", static_cast<int>(Stream::Cluster)}};
  rec.store_hash = store.content_hash();
  rec.outputs = {png.string(), js.string()};
  std::cout << "k=" << a.k << " inertia=" << map.result.inertia
            << " iterations=" << map.result.iterations_run << "\n";
  return kOk;
}

// ---------------------------------------------------------------- verify-store

int cmd_verify(const std::string& path, bool as_json) {
  const VerifyReport report = verify_store(path);
  if (as_json) {
    json j = json::array();
    for (const auto& e : report.entries) {
      j.push_back({{"subject", e.subject}, {"check", e.check}, {"ok", e.ok},
                   {"message", e.message}});
    }
    std::cout << json{{"ok", report.ok()}, {"entries", j}}.dump(2) << "\n";
  } else {
    for (const auto& e : report.entries) {
      if (!e.ok) std::cout << "FAIL " << e.check << " " << e.subject << ": " << e.message << "\n";
    }
    std::cout << (report.ok() ? "store OK" : "store INVALID") << " (" << report.entries.size()
              << " checks)\n";
  }
  return report.ok() ? kOk : kData;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Frozen-feature linear segmentation probes", "segprobe"};
  app.set_version_flag("--version", artifact_version());
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-labels", "Synthesize imperfect labels into a new store");
  synth->add_option("--store", sa.store, "Source store with dense masks")->required();
  synth->add_option("--out", sa.out, "New store directory")->required();
  synth->add_option("--regime", sa.regime, "point, scribble or noisy")
      ->required()
      ->check(CLI::IsMember({"point", "scribble", "noisy"}));
  synth->add_option("--k", sa.k, "Points per class")->capture_default_str();
  synth->add_option("--thickness", sa.thickness, "Scribble width in pixels")->capture_default_str();
  synth->add_option("--length-frac", sa.length_frac, "Scribble length over bbox diagonal")
      ->capture_default_str();
  synth->add_option("--target-quality", sa.target, "Noisy mask mIoU target in percent")
      ->capture_default_str();
  synth->add_option("--tolerance", sa.tolerance, "Accepted distance from the target, points")
      ->capture_default_str();
  synth->add_option("--seed", sa.seed)->capture_default_str();

  TrainArgs ta;
  std::string lr, iters, batch, momentum, wd, crop, flip, norm, head, seed, workers, cache;
  bool standardize = false;
  auto* tr = app.add_subcommand("train", "Train a linear probe on frozen features");
  tr->add_option("--store", ta.store)->required();
  tr->add_option("--out", ta.out, "Output directory");
  tr->add_option("--config", ta.config_path, "key = value config file; flags win");
  tr->add_option("--labels-provenance", ta.provenance,
                 "gt, scribble, point, noisy or external-pseudo");
  tr->add_option("--ids", ta.ids, "Restrict training to these image ids");
  tr->add_option("--lr", lr);
  tr->add_option("--iterations", iters);
  tr->add_option("--batch-size", batch);
  tr->add_option("--momentum", momentum);
  tr->add_option("--weight-decay", wd);
  tr->add_option("--crop", crop, "Crop size in pixels");
  tr->add_option("--flip-prob", flip);
  tr->add_option("--normalization", norm, "labeled-count or eq1-literal");
  tr->add_option("--loss-head", head, "softmax or per-class-sigmoid");
  tr->add_option("--seed", seed);
  tr->add_option("--workers", workers);
  tr->add_option("--cache-mb", cache);
  tr->add_flag("--standardize", standardize, "Standardize features per dimension");
  tr->add_flag("--print-config", ta.print_config, "Print the resolved config and exit");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint against store masks");
  ev->add_option("--store", ea.store)->required();
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--out", ea.out)->required();
  ev->add_option("--ids", ea.ids);

  ClusterArgs ca;
  auto* cl = app.add_subcommand("cluster", "K-means over one image's patch tokens");
  cl->add_option("--store", ca.store)->required();
  cl->add_option("--image-id", ca.image_id)->required();
  cl->add_option("--out", ca.out)->required();
  cl->add_option("--k", ca.k)->capture_default_str();
  cl->add_option("--seed", ca.seed)->capture_default_str();
  cl->add_option("--max-iter", ca.options.max_iter)->capture_default_str();
  cl->add_option("--tol", ca.options.tol)->capture_default_str();
  cl->add_option("--threads", ca.options.threads)->capture_default_str();
  cl->add_flag("--l2-normalize", ca.l2);

  std::string verify_path;
  bool verify_json = false;
  auto* vs = app.add_subcommand("verify-store", "Check a feature store for consistency");
  vs->add_option("--store", verify_path)->required();
  vs->add_flag("--json", verify_json);

  SyntheticSpec spec;
  std::string synthetic_out;
  auto* mk = app.add_subcommand("make-synthetic", "Write a linearly separable toy store");
  mk->add_option("--out", synthetic_out)->required();
  mk->add_option("--images", spec.images)->capture_default_str();
  mk->add_option("--grid", spec.grid)->capture_default_str();
  mk->add_option("--dim", spec.dim)->capture_default_str();
  mk->add_option("--classes", spec.classes)->capture_default_str();
  mk->add_option("--noise", spec.noise)->capture_default_str();
  mk->add_option("--patch", spec.patch)->capture_default_str();
  mk->add_option("--regions", spec.regions)->capture_default_str();
  mk->add_option("--seed", spec.seed)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  RunRecord rec;
  rec.command_line.push_back("segprobe");
  rec.command_line.insert(rec.command_line.end(), args.begin(), args.end());
  try {
    int code = kOk;
    std::string out_dir;
    if (synth->parsed()) {
      rec.subcommand = "synth-labels";
      code = cmd_synth_labels(sa, rec);
      out_dir = sa.out;
    } else if (tr->parsed()) {
      rec.subcommand = "train";
      const std::pair<const char*, std::string*> flags[] = {
          {"learning_rate", &lr}, {"iterations", &iters},   {"batch_size", &batch},
          {"momentum", &momentum}, {"weight_decay", &wd},   {"crop_pixels", &crop},
          {"flip_prob", &flip},   {"normalization", &norm}, {"loss_head", &head},
          {"seed", &seed},        {"workers", &workers},    {"cache_mb", &cache}};
      for (const auto& [key, value] : flags) {
        if (!value->empty()) ta.overrides[key] = *value;
      }
      if (standardize) ta.overrides["standardize"] = "true";
      if (!ta.print_config && ta.out.empty()) throw UsageError("--out is required");
      code = cmd_train(ta, rec);
      if (ta.print_config) return code;
      out_dir = ta.out;
    } else if (ev->parsed()) {
      rec.subcommand = "eval";
      code = cmd_eval(ea, rec);
      out_dir = ea.out;
    } else if (cl->parsed()) {
      rec.subcommand = "cluster";
      code = cmd_cluster(ca, rec);
      out_dir = ca.out;
    } else if (vs->parsed()) {
      return cmd_verify(verify_path, verify_json);
    } else if (mk->parsed()) {
      rec.subcommand = "make-synthetic";
      const auto store = make_synthetic_store(synthetic_out, spec);
      rec.config = {{"images", spec.images}, {"grid", spec.grid}, {"dim", spec.dim},
                    {"classes", spec.classes}, {"noise", spec.noise}, {"patch", spec.patch},
                    {"regions", spec.regions}};
      rec.seeds = {{"root", spec.seed}};
      rec.store_hash = store.content_hash();
      rec.outputs.push_back((fs::path(synthetic_out) / FeatureStore::kManifestName).string());
      std::cout << "wrote " << spec.images << " synthetic samples to " << synthetic_out << "\n";
      out_dir = synthetic_out;
    }
    rec.write(out_dir);
    return code;
  } catch (const UsageError& e) {
    std::cerr << "segprobe: usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const CalibrationError& e) {
    std::cerr << "segprobe: calibration failed: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    std::cerr << "segprobe: error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "segprobe: invalid argument: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "segprobe: runtime error: " << e.what() << "\n";
    return kRuntime;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace segprobe::cli
