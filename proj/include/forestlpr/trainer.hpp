#ifndef FORESTLPR_TRAINER_HPP
#define FORESTLPR_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "forestlpr/bev.hpp"
#include "forestlpr/error.hpp"
#include "forestlpr/interaction.hpp"
#include "forestlpr/manifest.hpp"
#include "forestlpr/mining.hpp"
#include "forestlpr/model.hpp"
#include "forestlpr/rng.hpp"
#include "forestlpr/tape.hpp"

namespace forestlpr {

inline double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw NumericError("cosine_distance: zero vector");
  }
  return 1.0 - a.dot(b) / (na * nb);
}

inline double triplet_loss(const Eigen::VectorXd& query, const Eigen::VectorXd& positive,
                           const Eigen::VectorXd& negative, double margin) {
  return std::max(cosine_distance(query, positive) - cosine_distance(query, negative) + margin,
                  0.0);
}

// Tape versions over unit-norm 1xD descriptor rows (cosine distance = 1 - dot).
inline ad::Var cosine_distance_on_tape(ad::Tape& tape, ad::Var a, ad::Var b) {
  return tape.add_const(tape.scale(tape.matmul_nt(a, b), -1.0), 1.0);
}

inline ad::Var triplet_loss_on_tape(ad::Tape& tape, ad::Var query, ad::Var positive,
                                    ad::Var negative, double margin) {
  ad::Var dqp = cosine_distance_on_tape(tape, query, positive);
  ad::Var dqn = cosine_distance_on_tape(tape, query, negative);
  return tape.relu(tape.add_const(tape.sub(dqp, dqn), margin));
}

// Random yaw in (-pi, pi) around the z-axis.
inline PointCloud augment(const PointCloud& cloud, Rng& rng) {
  constexpr double kPi = 3.14159265358979323846;
  double angle = 0.0;
  do {
    angle = rng.uniform(-kPi, kPi);
  } while (angle == -kPi);
  return rotate_z(cloud, angle);
}

struct TrainConfig {
  double margin = 0.3;
  double learning_rate = 1e-3;
  int stage1_epochs = 20;
  int stage2_epochs = 20;
  int triplets_per_epoch = 0;  // 0 = one triplet per eligible query
  std::uint64_t seed = 0;
  bool augmentation = true;

  void validate() const {
    if (!(margin > 0.0)) throw ConfigError("train.margin must be > 0");
    if (learning_rate < 0.0) throw ConfigError("train.learning_rate must be >= 0");
    if (stage1_epochs < 0 || stage2_epochs < 0)
      throw ConfigError("train.epochs must be >= 0");
    if (triplets_per_epoch < 0) throw ConfigError("train.triplets_per_epoch must be >= 0");
  }
};

struct LossCurvePoint {
  int epoch = 0;
  int stage = 0;
  double mean_loss = 0.0;
};

struct TrainResult {
  std::vector<LossCurvePoint> curve;
};

inline void save_loss_curve_csv(const std::string& path,
                                const std::vector<LossCurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "epoch,stage,mean_loss\n";
  out.precision(10);
  for (const LossCurvePoint& p : curve) {
    out << p.epoch << "," << p.stage << "," << p.mean_loss << "\n";
  }
}

namespace detail {

struct TripletPools {
  // Query id -> partner ids, in deterministic (sorted) order.
  std::map<std::string, std::vector<std::string>> positives;
  std::map<std::string, std::vector<std::string>> negatives;
  std::vector<std::string> eligible;  // queries with both a positive and a negative
};

inline TripletPools build_pools(const PairLists& pairs) {
  TripletPools pools;
  for (const MinedPair& p : pairs.positives) {
    pools.positives[p.query_id].push_back(p.other_id);
    pools.positives[p.other_id].push_back(p.query_id);
  }
  for (const MinedPair& p : pairs.negatives) {
    pools.negatives[p.query_id].push_back(p.other_id);
    pools.negatives[p.other_id].push_back(p.query_id);
  }
  for (auto& [id, v] : pools.positives) std::sort(v.begin(), v.end());
  for (auto& [id, v] : pools.negatives) std::sort(v.begin(), v.end());
  for (const auto& [id, v] : pools.positives) {
    if (!v.empty() && pools.negatives.count(id) && !pools.negatives.at(id).empty()) {
      pools.eligible.push_back(id);
    }
  }
  if (pools.eligible.empty()) {
    throw DatasetError("train: no query has both a positive and a negative pair");
  }
  return pools;
}

}  // namespace detail

// Two-stage triplet training over the full describe() pipeline. Stage 1 uses
// single-BEV inputs so the backbone and aggregation train first; stage 2
// trains the multi-BEV model end to end. Deterministic for a fixed seed when
// run single-threaded.
inline TrainResult train(const Manifest& manifest, const PairLists& pairs,
                         const CloudProvider& clouds, const BevConfig& bev_cfg,
                         ModelParams& model, const TrainConfig& cfg) {
  cfg.validate();
  bev_cfg.validate();
  const detail::TripletPools pools = detail::build_pools(pairs);
  const auto by_id = manifest_index(manifest);

  // Pre-processed clouds are small; keep them resident across epochs.
  std::unordered_map<std::string, PointCloud> cache;
  auto cloud_of = [&](const std::string& id) -> const PointCloud& {
    auto it = cache.find(id);
    if (it != cache.end()) return it->second;
    auto mi = by_id.find(id);
    if (mi == by_id.end()) throw DatasetError("train: pair references unknown id \"" + id + "\"");
    return cache.emplace(id, clouds(manifest[mi->second])).first->second;
  };

  BevConfig single_cfg = bev_cfg;  // stage 1: one slice over the whole band
  single_cfg.slices = 1;
  single_cfg.slice_height = bev_cfg.slice_height * bev_cfg.slices;

  Rng rng(cfg.seed);
  TrainResult result;

  auto run_stage = [&](int stage, int epochs, const BevConfig& stage_cfg) {
    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::vector<std::string> queries = pools.eligible;
      if (cfg.triplets_per_epoch > 0 &&
          static_cast<std::size_t>(cfg.triplets_per_epoch) < queries.size()) {
        // Deterministic Fisher-Yates prefix.
        for (int i = 0; i < cfg.triplets_per_epoch; ++i) {
          const std::size_t j =
              i + static_cast<std::size_t>(rng.uniform_index(queries.size() - i));
          std::swap(queries[static_cast<std::size_t>(i)], queries[j]);
        }
        queries.resize(static_cast<std::size_t>(cfg.triplets_per_epoch));
      }

      double loss_sum = 0.0;
      for (const std::string& qid : queries) {
        const std::vector<std::string>& pos = pools.positives.at(qid);
        const std::vector<std::string>& neg = pools.negatives.at(qid);
        const std::string& pid = pos[rng.uniform_index(pos.size())];
        const std::string& nid = neg[rng.uniform_index(neg.size())];

        auto stack_of = [&](const std::string& id) {
          PointCloud c = cloud_of(id);
          if (cfg.augmentation) c = augment(c, rng);
          return make_bev_stack(c, stage_cfg);
        };
        const BevStack sq = stack_of(qid), sp = stack_of(pid), sn = stack_of(nid);

        ad::Tape tape;
        BackboneVars bv = BackboneVars::bind(tape, model.backbone);
        HeadVars hv = HeadVars::bind(tape, model.head);
        ad::Var gq = describe_on_tape(tape, sq, bv, hv, model.backbone.cfg, model.head.cfg)
                         .descriptor;
        ad::Var gp = describe_on_tape(tape, sp, bv, hv, model.backbone.cfg, model.head.cfg)
                         .descriptor;
        ad::Var gn = describe_on_tape(tape, sn, bv, hv, model.backbone.cfg, model.head.cfg)
                         .descriptor;
        ad::Var loss = triplet_loss_on_tape(tape, gq, gp, gn, cfg.margin);
        loss_sum += tape.val(loss)(0, 0);

        if (cfg.learning_rate > 0.0) {
          tape.backward(loss);
          std::size_t vi = 0;
          std::vector<ad::Var> vars = bv.all;
          vars.insert(vars.end(), hv.all.begin(), hv.all.end());
          model.for_each_tensor([&](ad::Mat& m) {
            const ad::Var v = vars[vi++];
            if (tape.has_grad(v)) m -= cfg.learning_rate * tape.grad(v);
          });
        }
      }
      result.curve.push_back(LossCurvePoint{
          epoch, stage, queries.empty() ? 0.0 : loss_sum / static_cast<double>(queries.size())});
    }
  };

  run_stage(1, cfg.stage1_epochs, single_cfg);
  run_stage(2, cfg.stage2_epochs, bev_cfg);
  return result;
}

}  // namespace forestlpr

#endif
