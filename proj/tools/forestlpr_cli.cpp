// forestlpr: command-line pipeline for forest LiDAR place recognition.
//
// Subcommands: synth, preprocess, rasterize, mine, train, extract, eval,
// export-weights. All outputs are written atomically (temp file + rename);
// errors print a single "error: ..." line and exit nonzero.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "forestlpr/config.hpp"
#include "forestlpr/descriptor_io.hpp"
#include "forestlpr/manifest.hpp"
#include "forestlpr/mining.hpp"
#include "forestlpr/model.hpp"
#include "forestlpr/pcd_io.hpp"
#include "forestlpr/preprocess.hpp"
#include "forestlpr/retrieval.hpp"
#include "forestlpr/synth.hpp"
#include "forestlpr/trainer.hpp"
#include "forestlpr/util.hpp"

namespace fs = std::filesystem;
using namespace forestlpr;

namespace {

struct Timer {
  bool enabled = false;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void report(const std::string& stage, std::size_t items = 0) {
    if (!enabled) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                         .count();
    std::cerr << "timing: " << stage << " " << s << " s";
    if (items > 0) std::cerr << " (" << s / static_cast<double>(items) << " s/item)";
    std::cerr << "\n";
    start = std::chrono::steady_clock::now();
  }
};

std::string resolve_path(const std::string& base_file, const std::string& path) {
  const fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_file).parent_path() / p).string();
}

void ensure_out_dir(const std::string& dir, bool overwrite) {
  if (fs::exists(dir)) {
    if (!overwrite && !fs::is_empty(dir)) {
      throw UsageError(dir + ": output directory not empty (use --overwrite)");
    }
  } else {
    fs::create_directories(dir);
  }
}

void require_output_free(const std::string& path, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw UsageError(path + ": output exists (use --overwrite)");
  }
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// Effective configuration echoed next to every output for provenance.
void echo_config(const std::string& dir, const RunConfig& cfg) {
  atomic_write((fs::path(dir) / "effective_config.json").string(),
               [&cfg](const std::string& tmp) {
                 std::ofstream out(tmp);
                 if (!out) throw Error(tmp + ": cannot open file for writing");
                 out << run_config_to_json(cfg).dump(2) << "\n";
               });
}

PointCloud load_cloud(const std::string& manifest_path, const SubmapRecord& rec) {
  return load_pcd(resolve_path(manifest_path, rec.pcd_path)).cloud;
}

CloudProvider raw_provider(const std::string& manifest_path) {
  return [manifest_path](const SubmapRecord& rec) { return load_cloud(manifest_path, rec); };
}

CloudProvider preprocessed_provider(const std::string& manifest_path,
                                    const PreprocessConfig& cfg) {
  return [manifest_path, cfg](const SubmapRecord& rec) {
    return preprocess(load_cloud(manifest_path, rec), cfg);
  };
}

// ---------------------------------------------------------------------------

int cmd_synth(std::uint64_t seed, const SynthParams& params, const std::string& out_dir,
              bool overwrite, Timer& timer) {
  ensure_out_dir(out_dir, overwrite);
  const ForestScene scene = generate_scene(seed, params);
  const std::vector<TrajectoryPose> trajectory = make_loop_trajectory(scene);
  const std::vector<SyntheticSubmap> submaps = sample_submaps(scene, trajectory);

  fs::create_directories(fs::path(out_dir) / "clouds");
  Manifest manifest;
  std::vector<TimedPose> poses;
  for (const SyntheticSubmap& sm : submaps) {
    const std::string rel = "clouds/" + sm.id + ".pcd";
    atomic_write((fs::path(out_dir) / rel).string(), [&sm](const std::string& tmp) {
      save_pcd(tmp, sm.cloud);
    });
    SubmapRecord rec;
    rec.id = sm.id;
    rec.sequence = params.sequence;
    rec.timestamp = sm.pose.timestamp;
    rec.pcd_path = rel;
    rec.pose = sm.pose.pose;
    manifest.push_back(std::move(rec));
    poses.push_back(sm.pose);
  }
  atomic_write((fs::path(out_dir) / "manifest.jsonl").string(),
               [&manifest](const std::string& tmp) { save_manifest(tmp, manifest); });
  atomic_write((fs::path(out_dir) / "poses.txt").string(),
               [&poses](const std::string& tmp) { save_pose_file(tmp, poses); });
  timer.report("synth", submaps.size());
  std::cout << "synth: wrote " << submaps.size() << " submaps to " << out_dir << "\n";
  return 0;
}

int cmd_preprocess(const std::string& manifest_path, const RunConfig& cfg,
                   const std::string& out_dir, int jobs, bool overwrite, Timer& timer) {
  ensure_out_dir(out_dir, overwrite);
  const Manifest manifest = load_manifest(manifest_path);
  fs::create_directories(fs::path(out_dir) / "clouds");
  Manifest out_manifest = manifest;
  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    const PointCloud cloud = preprocess(load_cloud(manifest_path, manifest[i]),
                                        cfg.preprocess);
    const std::string rel = "clouds/" + manifest[i].id + ".pcd";
    atomic_write((fs::path(out_dir) / rel).string(),
                 [&cloud](const std::string& tmp) { save_pcd(tmp, cloud); });
    out_manifest[i].pcd_path = rel;
  });
  atomic_write((fs::path(out_dir) / "manifest.jsonl").string(),
               [&out_manifest](const std::string& tmp) { save_manifest(tmp, out_manifest); });
  echo_config(out_dir, cfg);
  timer.report("preprocess", manifest.size());
  std::cout << "preprocess: wrote " << manifest.size() << " clouds to " << out_dir << "\n";
  return 0;
}

int cmd_rasterize(const std::string& manifest_path, const RunConfig& cfg,
                  const std::string& out_dir, bool pgm, int jobs, bool overwrite,
                  Timer& timer) {
  ensure_out_dir(out_dir, overwrite);
  const Manifest manifest = load_manifest(manifest_path);
  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    const PointCloud cloud = preprocess(load_cloud(manifest_path, manifest[i]),
                                        cfg.preprocess);
    const BevStack stack = make_bev_stack(cloud, cfg.bev);
    for (std::size_t s = 0; s < stack.images.size(); ++s) {
      const std::string stem = manifest[i].id + "_slice" + std::to_string(s);
      atomic_write((fs::path(out_dir) / (stem + ".f32")).string(),
                   [&](const std::string& tmp) { save_raw_f32(tmp, stack.images[s]); });
      if (pgm) {
        atomic_write((fs::path(out_dir) / (stem + ".pgm")).string(),
                     [&](const std::string& tmp) { save_pgm(tmp, stack.images[s]); });
      }
    }
  });
  echo_config(out_dir, cfg);
  timer.report("rasterize", manifest.size());
  std::cout << "rasterize: wrote " << manifest.size() * cfg.bev.slices << " images to "
            << out_dir << "\n";
  return 0;
}

int cmd_mine(const std::string& manifest_path, const RunConfig& cfg, const std::string& out_csv,
             bool overwrite, Timer& timer) {
  require_output_free(out_csv, overwrite);
  const Manifest manifest = load_manifest(manifest_path);
  const PairLists pairs = mine_pairs(manifest, cfg.mining, raw_provider(manifest_path));
  atomic_write(out_csv, [&pairs](const std::string& tmp) { save_pairs_csv(tmp, pairs); });
  timer.report("mine");
  std::cout << "mine: " << pairs.positives.size() << " positive / " << pairs.negatives.size()
            << " negative pairs -> " << out_csv << "\n";
  return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& pairs_csv,
              const RunConfig& cfg, const std::string& out_model,
              const std::string& out_curve, bool overwrite, Timer& timer) {
  require_output_free(out_model, overwrite);
  if (!out_curve.empty()) require_output_free(out_curve, overwrite);
  const Manifest manifest = load_manifest(manifest_path);
  const PairLists pairs = load_pairs_csv(pairs_csv);
  Rng rng(cfg.train.seed);
  ModelParams model = ModelParams::random_init(cfg.backbone, cfg.head, rng);
  const TrainResult result = train(manifest, pairs,
                                   preprocessed_provider(manifest_path, cfg.preprocess),
                                   cfg.bev, model, cfg.train);
  atomic_write(out_model, [&model](const std::string& tmp) { save_model(tmp, model); });
  if (!out_curve.empty()) {
    atomic_write(out_curve,
                 [&result](const std::string& tmp) { save_loss_curve_csv(tmp, result.curve); });
  }
  timer.report("train");
  std::cout << "train: " << result.curve.size() << " epochs -> " << out_model << "\n";
  return 0;
}

int cmd_extract(const std::string& manifest_path, const std::string& model_path,
                const RunConfig& cfg, const std::string& out_desc, int jobs, bool overwrite,
                Timer& timer) {
  require_output_free(out_desc, overwrite);
  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.empty()) throw DatasetError(manifest_path + ": empty manifest");
  ModelParams model = load_model(model_path);
  if (model.backbone.cfg.input_h != cfg.bev.out_height ||
      model.backbone.cfg.input_w != cfg.bev.out_width) {
    throw ConfigError("model input size does not match bev output size in config");
  }
  DescriptorSet set;
  set.rows.resize(static_cast<Eigen::Index>(manifest.size()), cfg.head.descriptor_dim);
  set.ids.resize(manifest.size());
  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    const PointCloud cloud = preprocess(load_cloud(manifest_path, manifest[i]),
                                        cfg.preprocess);
    const BevStack stack = make_bev_stack(cloud, cfg.bev);
    const Descriptor d = describe(stack, model.backbone, model.head);
    set.rows.row(static_cast<Eigen::Index>(i)) = d.transpose();
    set.ids[i] = manifest[i].id;
  });
  atomic_write(out_desc, [&set](const std::string& tmp) {
    save_descriptors(tmp, set);
    // save_descriptors writes the sidecar next to its first argument; move it
    // alongside the renamed file afterwards.
  });
  // The sidecar was written for the temp path; rewrite it for the final path.
  {
    std::ofstream sidecar(descriptor_sidecar_path(out_desc));
    if (!sidecar) throw Error(descriptor_sidecar_path(out_desc) + ": cannot open");
    sidecar << "row,id\n";
    for (std::size_t i = 0; i < set.ids.size(); ++i) sidecar << i << "," << set.ids[i] << "\n";
    std::error_code ec;
    fs::remove(descriptor_sidecar_path(out_desc + ".tmp"), ec);
  }
  timer.report("extract", manifest.size());
  std::cout << "extract: " << manifest.size() << " descriptors -> " << out_desc << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& desc_paths,
             const std::vector<std::string>& manifest_paths, const RunConfig& cfg,
             const std::string& protocol, const std::string& out_csv,
             const std::string& out_radius_csv, bool overwrite, Timer& timer) {
  require_output_free(out_csv, overwrite);
  if (!out_radius_csv.empty()) require_output_free(out_radius_csv, overwrite);
  if (desc_paths.size() != manifest_paths.size()) {
    throw UsageError("eval: need one --manifest per --descriptors");
  }
  std::vector<RetrievalIndex> indexes;
  for (std::size_t i = 0; i < desc_paths.size(); ++i) {
    indexes.push_back(
        build_index(load_descriptors(desc_paths[i]), load_manifest(manifest_paths[i])));
  }
  std::vector<ReportRow> rows;
  std::vector<IntraReport> intra_reports;
  if (protocol == "intra") {
    for (const RetrievalIndex& index : indexes) {
      const IntraReport report = evaluate_intra(index, cfg.eval);
      append_report_rows(rows, report);
      intra_reports.push_back(report);
    }
  } else if (protocol == "inter") {
    if (indexes.size() < 2) throw UsageError("eval: inter protocol needs >= 2 sequences");
    double sum_r1 = 0.0, sum_mrr = 0.0;
    std::size_t n = 0;
    for (std::size_t q = 0; q < indexes.size(); ++q) {
      for (std::size_t d = 0; d < indexes.size(); ++d) {
        if (q == d) continue;
        const InterReport report = evaluate_inter(indexes[q], indexes[d], cfg.eval);
        append_report_rows(rows, report);
        sum_r1 += report.recall_at_1;
        sum_mrr += report.mrr;
        ++n;
      }
    }
    rows.push_back({"inter", "mean", "recall_at_1", sum_r1 / static_cast<double>(n)});
    rows.push_back({"inter", "mean", "mrr", sum_mrr / static_cast<double>(n)});
  } else {
    throw UsageError("eval: protocol must be intra or inter");
  }
  atomic_write(out_csv, [&rows](const std::string& tmp) { save_report_csv(tmp, rows); });
  if (!out_radius_csv.empty() && !intra_reports.empty()) {
    atomic_write(out_radius_csv, [&intra_reports](const std::string& tmp) {
      save_radius_curve_csv(tmp, intra_reports);
    });
  }
  timer.report("eval");
  std::cout << "eval: " << rows.size() << " metric rows -> " << out_csv << "\n";
  return 0;
}

int cmd_export_weights(const std::string& manifest_path, const std::string& model_path,
                       const RunConfig& cfg, const std::string& submap_id,
                       const std::string& out_csv, bool overwrite, Timer& timer) {
  require_output_free(out_csv, overwrite);
  const Manifest manifest = load_manifest(manifest_path);
  const auto by_id = manifest_index(manifest);
  const auto it = by_id.find(submap_id);
  if (it == by_id.end()) {
    throw DatasetError(manifest_path + ": no submap with id \"" + submap_id + "\"");
  }
  ModelParams model = load_model(model_path);
  const PointCloud cloud = preprocess(load_cloud(manifest_path, manifest[it->second]),
                                      cfg.preprocess);
  const BevStack stack = make_bev_stack(cloud, cfg.bev);
  const std::vector<PatchWeightRow> weights = export_weights(stack, model.backbone, model.head);
  atomic_write(out_csv, [&weights](const std::string& tmp) {
    std::ofstream out(tmp);
    if (!out) throw Error(tmp + ": cannot open file for writing");
    out << "patch_row,patch_col";
    if (!weights.empty()) {
      for (std::size_t s = 0; s < weights.front().weights.size(); ++s) {
        out << ",w_" << s + 1;
      }
    }
    out << "\n";
    out.precision(10);
    for (const PatchWeightRow& r : weights) {
      out << r.patch_row << "," << r.patch_col;
      for (double w : r.weights) out << "," << w;
      out << "\n";
    }
  });
  timer.report("export-weights");
  std::cout << "export-weights: " << weights.size() << " patches -> " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forestlpr: forest LiDAR place recognition pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  int jobs = 1;
  bool overwrite = false;
  Timer timer;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--overwrite", overwrite, "replace existing outputs");
  app.add_flag("--timing", timer.enabled, "print per-stage wall clock to stderr");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic forest dataset");
  std::uint64_t seed = 0;
  std::string preset = "dense", out_dir, sequence;
  SynthParams overrides;  // values copied onto the preset when flags are given
  synth->add_option("--seed", seed, "scene seed");
  synth->add_option("--preset", preset, "dense|sparse")
      ->check(CLI::IsMember({"dense", "sparse"}));
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--sequence", sequence, "sequence name (default synth-<seed>)");
  double scene_size = -1, tree_density = -1, spacing = -1, resample_sigma = -1;
  double reverse_fraction = -1, blind_sector = -1, pass_offset = -1;
  int passes = -1;
  bool seasonal = false;
  synth->add_option("--scene-size", scene_size, "square scene edge length, m");
  synth->add_option("--tree-density", tree_density, "trees per m^2");
  synth->add_option("--spacing", spacing, "submap spacing along the loop, m");
  synth->add_option("--passes", passes, "loop traversals");
  synth->add_option("--reverse-fraction", reverse_fraction,
                    "fraction of pass 2 driven in the reverse heading");
  synth->add_option("--resample-sigma", resample_sigma, "per-visit point noise, m");
  synth->add_flag("--seasonal", seasonal, "re-randomize canopy points per pass");
  synth->add_option("--blind-sector", blind_sector, "blind azimuth wedge, degrees");

  // preprocess / rasterize
  auto* prep = app.add_subcommand("preprocess", "ground-normalize and crop clouds");
  std::string manifest_path;
  prep->add_option("--manifest", manifest_path, "input manifest")->required();
  std::string prep_out;
  prep->add_option("--out", prep_out, "output directory")->required();

  auto* raster = app.add_subcommand("rasterize", "write BEV images per submap");
  std::string raster_manifest, raster_out, bev_mode = "density";
  bool pgm = false;
  raster->add_option("--manifest", raster_manifest)->required();
  raster->add_option("--out", raster_out)->required();
  raster->add_option("--bev-mode", bev_mode, "density|elevation")
      ->check(CLI::IsMember({"density", "elevation"}));
  raster->add_flag("--pgm", pgm, "also write 16-bit PGM previews");

  // mine / train
  auto* mine = app.add_subcommand("mine", "mine positive/negative training pairs");
  std::string mine_manifest, mine_out, mine_mode;
  mine->add_option("--manifest", mine_manifest)->required();
  mine->add_option("--out", mine_out, "pair CSV path")->required();
  mine->add_option("--mode", mine_mode, "overlap|distance (overrides config)")
      ->check(CLI::IsMember({"overlap", "distance"}));

  auto* trainc = app.add_subcommand("train", "train the descriptor model");
  std::string train_manifest, train_pairs, train_model, train_curve;
  trainc->add_option("--manifest", train_manifest)->required();
  trainc->add_option("--pairs", train_pairs, "mined pair CSV")->required();
  trainc->add_option("--out", train_model, "model file path")->required();
  trainc->add_option("--loss-curve", train_curve, "loss curve CSV path");

  // extract / eval / export-weights
  auto* extract = app.add_subcommand("extract", "compute descriptors for a manifest");
  std::string ext_manifest, ext_model, ext_out;
  extract->add_option("--manifest", ext_manifest)->required();
  extract->add_option("--model", ext_model)->required();
  extract->add_option("--out", ext_out, "descriptor file path")->required();

  auto* evalc = app.add_subcommand("eval", "evaluate retrieval metrics");
  std::vector<std::string> eval_desc, eval_manifests;
  std::string protocol = "intra", eval_out, eval_radius_out;
  evalc->add_option("--descriptors", eval_desc, "descriptor file(s)")->required();
  evalc->add_option("--manifest", eval_manifests, "manifest(s), one per descriptor file")
      ->required();
  evalc->add_option("--protocol", protocol, "intra|inter")
      ->check(CLI::IsMember({"intra", "inter"}));
  evalc->add_option("--out", eval_out, "report CSV path")->required();
  evalc->add_option("--radius-curve", eval_radius_out, "R@1-vs-radius CSV (intra only)");

  auto* exw = app.add_subcommand("export-weights", "per-patch slice-weight table");
  std::string exw_manifest, exw_model, exw_id, exw_out;
  exw->add_option("--manifest", exw_manifest)->required();
  exw->add_option("--model", exw_model)->required();
  exw->add_option("--id", exw_id, "submap id")->required();
  exw->add_option("--out", exw_out, "weight CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);

    if (synth->parsed()) {
      SynthParams p = preset == "sparse" ? SynthParams::sparse() : SynthParams::dense();
      if (scene_size > 0) p.scene_x = p.scene_y = scene_size;
      if (tree_density >= 0) p.tree_density = tree_density;
      if (spacing > 0) p.submap_spacing = spacing;
      if (passes > 0) p.passes = passes;
      if (reverse_fraction >= 0) p.reverse_fraction = reverse_fraction;
      if (resample_sigma >= 0) p.resample_sigma = resample_sigma;
      if (blind_sector >= 0) p.blind_sector_deg = blind_sector;
      p.seasonal = seasonal;
      p.sequence = sequence.empty() ? "synth-" + std::to_string(seed) : sequence;
      return cmd_synth(seed, p, out_dir, overwrite, timer);
    }
    if (prep->parsed()) {
      return cmd_preprocess(manifest_path, cfg, prep_out, jobs, overwrite, timer);
    }
    if (raster->parsed()) {
      cfg.bev.elevation = bev_mode == "elevation";
      return cmd_rasterize(raster_manifest, cfg, raster_out, pgm, jobs, overwrite, timer);
    }
    if (mine->parsed()) {
      if (mine_mode == "overlap") cfg.mining.mode = MiningMode::overlap;
      if (mine_mode == "distance") cfg.mining.mode = MiningMode::distance;
      return cmd_mine(mine_manifest, cfg, mine_out, overwrite, timer);
    }
    if (trainc->parsed()) {
      return cmd_train(train_manifest, train_pairs, cfg, train_model, train_curve, overwrite,
                       timer);
    }
    if (extract->parsed()) {
      return cmd_extract(ext_manifest, ext_model, cfg, ext_out, jobs, overwrite, timer);
    }
    if (evalc->parsed()) {
      return cmd_eval(eval_desc, eval_manifests, cfg, protocol, eval_out, eval_radius_out,
                      overwrite, timer);
    }
    if (exw->parsed()) {
      return cmd_export_weights(exw_manifest, exw_model, cfg, exw_id, exw_out, overwrite,
                                timer);
    }
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
