#ifndef FORESTLPR_CONFIG_HPP
#define FORESTLPR_CONFIG_HPP

#include <exception>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "forestlpr/backbone.hpp"
#include "forestlpr/bev.hpp"
#include "forestlpr/error.hpp"
#include "forestlpr/interaction.hpp"
#include "forestlpr/mining.hpp"
#include "forestlpr/preprocess.hpp"
#include "forestlpr/retrieval.hpp"
#include "forestlpr/trainer.hpp"

namespace forestlpr {

// One JSON document configures the whole pipeline. Every key is optional and
// defaults to the struct default; unknown keys are an error so typos cannot
// silently fall back to defaults.
struct RunConfig {
  PreprocessConfig preprocess;
  BevConfig bev;
  BackboneConfig backbone;
  HeadConfig head;
  TrainConfig train;
  MiningConfig mining;
  EvalConfig eval;

  void validate() const {
    preprocess.validate();
    bev.validate();
    backbone.validate();
    head.validate();
    train.validate();
    mining.validate();
    eval.validate();
    if (bev.out_height != backbone.input_h || bev.out_width != backbone.input_w) {
      throw ConfigError("bev output size must match backbone input size");
    }
  }
};

namespace detail {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string section)
      : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError("config." + section_ + ": must be a JSON object");
  }

  ~SectionReader() noexcept(false) {
    // Unknown-key detection must never throw while another config error is
    // already unwinding the stack.
    if (std::uncaught_exceptions() > exceptions_at_entry_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("config." + section_ + "." + it.key() + ": unknown key");
      }
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config." + section_ + "." + key + ": wrong value type");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
  int exceptions_at_entry_ = std::uncaught_exceptions();
};

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  RunConfig cfg;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& section = it.key();
    if (section == "preprocess") {
      detail::SectionReader r(*it, section);
      r.get("ground_cell", cfg.preprocess.ground_cell);
      r.get("ground_tolerance", cfg.preprocess.ground_tolerance);
      r.get("radius", cfg.preprocess.radius);
      r.get("radius_step", cfg.preprocess.radius_step);
      r.get("radius_max", cfg.preprocess.radius_max);
      r.get("crop_lo", cfg.preprocess.crop_lo);
      r.get("crop_hi", cfg.preprocess.crop_hi);
    } else if (section == "bev") {
      detail::SectionReader r(*it, section);
      r.get("slices", cfg.bev.slices);
      r.get("slice_height", cfg.bev.slice_height);
      r.get("z_lo", cfg.bev.z_lo);
      r.get("res", cfg.bev.res);
      r.get("extent", cfg.bev.extent);
      r.get("out_height", cfg.bev.out_height);
      r.get("out_width", cfg.bev.out_width);
      r.get("elevation", cfg.bev.elevation);
    } else if (section == "backbone") {
      detail::SectionReader r(*it, section);
      bool toy = false;
      r.get("toy", toy);
      if (toy) cfg.backbone = BackboneConfig::toy();
      r.get("patch", cfg.backbone.patch);
      r.get("channels", cfg.backbone.channels);
      r.get("layers", cfg.backbone.layers);
      r.get("heads", cfg.backbone.heads);
      r.get("level_low", cfg.backbone.level_low);
      r.get("level_mid", cfg.backbone.level_mid);
      r.get("level_high", cfg.backbone.level_high);
      r.get("input_h", cfg.backbone.input_h);
      r.get("input_w", cfg.backbone.input_w);
    } else if (section == "head") {
      detail::SectionReader r(*it, section);
      r.get("descriptor_dim", cfg.head.descriptor_dim);
      r.get("gem_exponent", cfg.head.gem_exponent);
    } else if (section == "train") {
      detail::SectionReader r(*it, section);
      r.get("margin", cfg.train.margin);
      r.get("learning_rate", cfg.train.learning_rate);
      r.get("stage1_epochs", cfg.train.stage1_epochs);
      r.get("stage2_epochs", cfg.train.stage2_epochs);
      r.get("triplets_per_epoch", cfg.train.triplets_per_epoch);
      r.get("seed", cfg.train.seed);
      r.get("augmentation", cfg.train.augmentation);
    } else if (section == "mining") {
      detail::SectionReader r(*it, section);
      std::string mode;
      r.get("mode", mode);
      if (!mode.empty()) {
        if (mode == "overlap") {
          cfg.mining.mode = MiningMode::overlap;
        } else if (mode == "distance") {
          cfg.mining.mode = MiningMode::distance;
        } else {
          throw ConfigError("config.mining.mode: must be \"overlap\" or \"distance\"");
        }
      }
      r.get("voxel_edge", cfg.mining.voxel_edge);
      r.get("overlap_positive", cfg.mining.overlap_positive);
      r.get("overlap_negative", cfg.mining.overlap_negative);
      r.get("distance_positive", cfg.mining.distance_positive);
      r.get("distance_negative", cfg.mining.distance_negative);
      r.get("temporal_exclusion", cfg.mining.temporal_exclusion);
      r.get("coarse_gate", cfg.mining.coarse_gate);
    } else if (section == "eval") {
      detail::SectionReader r(*it, section);
      r.get("success_radius", cfg.eval.success_radius);
      r.get("temporal_exclusion", cfg.eval.temporal_exclusion);
      r.get("top_k", cfg.eval.top_k);
      r.get("radius_curve", cfg.eval.radius_curve);
    } else {
      throw ConfigError("config." + section + ": unknown section");
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": invalid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["preprocess"] = {{"ground_cell", cfg.preprocess.ground_cell},
                     {"ground_tolerance", cfg.preprocess.ground_tolerance},
                     {"radius", cfg.preprocess.radius},
                     {"radius_step", cfg.preprocess.radius_step},
                     {"radius_max", cfg.preprocess.radius_max},
                     {"crop_lo", cfg.preprocess.crop_lo},
                     {"crop_hi", cfg.preprocess.crop_hi}};
  j["bev"] = {{"slices", cfg.bev.slices},
              {"slice_height", cfg.bev.slice_height},
              {"z_lo", cfg.bev.z_lo},
              {"res", cfg.bev.res},
              {"extent", cfg.bev.extent},
              {"out_height", cfg.bev.out_height},
              {"out_width", cfg.bev.out_width},
              {"elevation", cfg.bev.elevation}};
  j["backbone"] = {{"patch", cfg.backbone.patch},
                   {"channels", cfg.backbone.channels},
                   {"layers", cfg.backbone.layers},
                   {"heads", cfg.backbone.heads},
                   {"level_low", cfg.backbone.level_low},
                   {"level_mid", cfg.backbone.level_mid},
                   {"level_high", cfg.backbone.level_high},
                   {"input_h", cfg.backbone.input_h},
                   {"input_w", cfg.backbone.input_w}};
  j["head"] = {{"descriptor_dim", cfg.head.descriptor_dim},
               {"gem_exponent", cfg.head.gem_exponent}};
  j["train"] = {{"margin", cfg.train.margin},
                {"learning_rate", cfg.train.learning_rate},
                {"stage1_epochs", cfg.train.stage1_epochs},
                {"stage2_epochs", cfg.train.stage2_epochs},
                {"triplets_per_epoch", cfg.train.triplets_per_epoch},
                {"seed", cfg.train.seed},
                {"augmentation", cfg.train.augmentation}};
  j["mining"] = {{"mode", cfg.mining.mode == MiningMode::overlap ? "overlap" : "distance"},
                 {"voxel_edge", cfg.mining.voxel_edge},
                 {"overlap_positive", cfg.mining.overlap_positive},
                 {"overlap_negative", cfg.mining.overlap_negative},
                 {"distance_positive", cfg.mining.distance_positive},
                 {"distance_negative", cfg.mining.distance_negative},
                 {"temporal_exclusion", cfg.mining.temporal_exclusion},
                 {"coarse_gate", cfg.mining.coarse_gate}};
  j["eval"] = {{"success_radius", cfg.eval.success_radius},
               {"temporal_exclusion", cfg.eval.temporal_exclusion},
               {"top_k", cfg.eval.top_k},
               {"radius_curve", cfg.eval.radius_curve}};
  return j;
}

}  // namespace forestlpr

#endif
