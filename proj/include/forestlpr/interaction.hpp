#ifndef FORESTLPR_INTERACTION_HPP
#define FORESTLPR_INTERACTION_HPP

#include <string>
#include <vector>

#include "forestlpr/backbone.hpp"
#include "forestlpr/bev.hpp"
#include "forestlpr/error.hpp"
#include "forestlpr/rng.hpp"
#include "forestlpr/tape.hpp"

namespace forestlpr {

struct HeadConfig {
  int descriptor_dim = 1024;  // D
  double gem_exponent = 3.0;  // fixed, non-learned

  void validate() const {
    if (descriptor_dim < 1) throw ConfigError("head.descriptor_dim must be >= 1");
    if (!(gem_exponent > 0.0)) throw ConfigError("head.gem_exponent must be > 0");
  }

  bool operator==(const HeadConfig&) const = default;
};

struct HeadParams {
  HeadConfig cfg;
  ad::Mat attention_weight;  // W_a: 3C x 1
  ad::Mat projection;        // W_g: 9C x D, no bias

  static HeadParams random_init(const HeadConfig& cfg, int backbone_channels, Rng& rng) {
    cfg.validate();
    HeadParams p;
    p.cfg = cfg;
    p.attention_weight = ad::Mat(3 * backbone_channels, 1);
    p.projection = ad::Mat(9 * backbone_channels, cfg.descriptor_dim);
    for (Eigen::Index i = 0; i < p.attention_weight.rows(); ++i)
      p.attention_weight(i, 0) = rng.truncated_normal(0.02);
    for (Eigen::Index i = 0; i < p.projection.rows(); ++i)
      for (Eigen::Index j = 0; j < p.projection.cols(); ++j)
        p.projection(i, j) = rng.truncated_normal(0.02);
    return p;
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    f(attention_weight);
    f(projection);
  }
};

struct HeadVars {
  ad::Var attention_weight, projection;
  std::vector<ad::Var> all;

  static HeadVars bind(ad::Tape& tape, HeadParams& params) {
    HeadVars v;
    v.attention_weight = tape.leaf(params.attention_weight);
    v.projection = tape.leaf(params.projection);
    v.all = {v.attention_weight, v.projection};
    return v;
  }
};

// How per-slice token sets are fused into one token set.
enum class FuseMode {
  interaction,     // mean-centered features drive the slice weights
  no_interaction,  // raw features drive the slice weights (ablation)
  max_pool,        // elementwise max over slices (ablation)
};

// Per-token deviation from the slice mean: dP_s = P_s - mean_j P_j.
inline std::vector<ad::Var> relative_features(ad::Tape& tape,
                                              const std::vector<ad::Var>& slices) {
  ad::Var mean = tape.average(slices);
  std::vector<ad::Var> out;
  out.reserve(slices.size());
  for (ad::Var s : slices) out.push_back(tape.sub(s, mean));
  return out;
}

// Per-token softmax over slice logits dP_s * W_a; returns (N+2) x S weights.
inline ad::Var slice_weights(ad::Tape& tape, const std::vector<ad::Var>& features,
                             ad::Var attention_weight) {
  std::vector<ad::Var> logits;
  logits.reserve(features.size());
  for (ad::Var f : features) logits.push_back(tape.matmul(f, attention_weight));
  return tape.softmax_rows(tape.concat_cols(logits));
}

// Ablation wiring: Eq. weights computed from raw slice features. Softmax
// shift invariance makes the output identical to slice_weights whenever the
// per-token mean contributes a constant logit shift, which it always does;
// kept to mirror the ablation plumbing.
inline ad::Var no_interaction_weights(ad::Tape& tape, const std::vector<ad::Var>& slices,
                                      ad::Var attention_weight) {
  return slice_weights(tape, slices, attention_weight);
}

// Convex combination of slice tokens: row i of the result is
// sum_s w(i,s) * P_s(i,:).
inline ad::Var weighted_fuse(ad::Tape& tape, ad::Var weights,
                             const std::vector<ad::Var>& slices) {
  std::vector<ad::Var> terms;
  terms.reserve(slices.size());
  for (std::size_t s = 0; s < slices.size(); ++s) {
    ad::Var w_col = tape.slice_cols(weights, static_cast<Eigen::Index>(s), 1);
    terms.push_back(tape.rowwise_scale(slices[s], w_col));
  }
  return terms.size() == 1 ? terms.front() : tape.sum(terms);
}

inline ad::Var max_fuse(ad::Tape& tape, const std::vector<ad::Var>& slices) {
  return slices.size() == 1 ? slices.front() : tape.max_elem(slices);
}

// GeM pooling of an M x K token matrix into a 1 x K vector.
inline ad::Var gem_pool(ad::Tape& tape, ad::Var tokens, double exponent, double eps = 1e-6) {
  ad::Var clamped = tape.clamp_min(tokens, eps);
  ad::Var powered = tape.pow_elem(clamped, exponent);
  return tape.pow_elem(tape.mean_rows(powered), 1.0 / exponent);
}

// G* = [cls | dist | GeM(patches)] in 9C, then G = L2(L2(G*) * W_g).
inline ad::Var aggregate_global(ad::Tape& tape, ad::Var fused, const HeadVars& head,
                                double gem_exponent) {
  if (tape.val(fused).rows() < 3) {
    throw ConfigError("aggregate_global: need class, distillation, and patch tokens");
  }
  ad::Var cls = tape.slice_rows(fused, 0, 1);
  ad::Var dist = tape.slice_rows(fused, 1, 1);
  ad::Var patches = tape.slice_rows(fused, 2, tape.val(fused).rows() - 2);
  ad::Var pooled = gem_pool(tape, patches, gem_exponent);
  ad::Var star = tape.concat_cols({cls, dist, pooled});
  ad::Var projected = tape.matmul(tape.l2_normalize_row(star), head.projection);
  return tape.l2_normalize_row(projected);
}

// Full descriptor head over per-slice token sets P'.
inline ad::Var interaction_head(ad::Tape& tape, const std::vector<ad::Var>& slices,
                                const HeadVars& head, double gem_exponent, FuseMode mode) {
  ad::Var fused;
  switch (mode) {
    case FuseMode::interaction: {
      ad::Var w = slice_weights(tape, relative_features(tape, slices), head.attention_weight);
      fused = weighted_fuse(tape, w, slices);
      break;
    }
    case FuseMode::no_interaction: {
      ad::Var w = no_interaction_weights(tape, slices, head.attention_weight);
      fused = weighted_fuse(tape, w, slices);
      break;
    }
    case FuseMode::max_pool:
      fused = max_fuse(tape, slices);
      break;
  }
  return aggregate_global(tape, fused, head, gem_exponent);
}

// ---------------------------------------------------------------------------
// describe(): shared backbone forward per slice, interaction, aggregation.
// ---------------------------------------------------------------------------

struct DescribeOutput {
  ad::Var descriptor;               // 1 x D on the tape
  std::vector<ad::Var> token_sets;  // per-slice (N+2) x 3C
};

// Training-path describe: everything on one tape so gradients flow into the
// backbone parameters.
inline DescribeOutput describe_on_tape(ad::Tape& tape, const BevStack& stack,
                                       const BackboneVars& backbone, const HeadVars& head,
                                       const BackboneConfig& bcfg, const HeadConfig& hcfg,
                                       FuseMode mode = FuseMode::interaction) {
  if (stack.images.empty()) throw ConfigError("describe: empty BEV stack");
  DescribeOutput out;
  out.token_sets.reserve(stack.images.size());
  for (const DensityImage& img : stack.images) {
    out.token_sets.push_back(backbone_forward(tape, img, backbone, bcfg));
  }
  out.descriptor = interaction_head(tape, out.token_sets, head, hcfg.gem_exponent, mode);
  return out;
}

using Descriptor = Eigen::VectorXd;

// Inference-path describe: each slice runs on a scratch tape that is freed
// immediately, keeping memory flat for large backbones. Numerically identical
// to the training path.
inline Descriptor describe(const BevStack& stack, BackboneParams& backbone, HeadParams& head,
                           FuseMode mode = FuseMode::interaction) {
  if (stack.images.empty()) throw ConfigError("describe: empty BEV stack");
  std::vector<ad::Mat> token_sets;
  token_sets.reserve(stack.images.size());
  for (const DensityImage& img : stack.images) {
    ad::Tape scratch;
    BackboneVars vars = BackboneVars::bind(scratch, backbone);
    token_sets.push_back(scratch.val(backbone_forward(scratch, img, vars, backbone.cfg)));
  }
  ad::Tape tape;
  HeadVars hv = HeadVars::bind(tape, head);
  std::vector<ad::Var> slices;
  slices.reserve(token_sets.size());
  for (ad::Mat& m : token_sets) slices.push_back(tape.leaf(std::move(m)));
  ad::Var g = interaction_head(tape, slices, hv, head.cfg.gem_exponent, mode);
  return tape.val(g).row(0).transpose();
}

// Per-patch slice-weight table for attention inspection: one row per patch
// token with its grid coordinates and w_1..w_S.
struct PatchWeightRow {
  int patch_row = 0;
  int patch_col = 0;
  std::vector<double> weights;
};

inline std::vector<PatchWeightRow> export_weights(const BevStack& stack,
                                                  BackboneParams& backbone, HeadParams& head) {
  if (stack.images.empty()) throw ConfigError("export_weights: empty BEV stack");
  std::vector<ad::Mat> token_sets;
  for (const DensityImage& img : stack.images) {
    ad::Tape scratch;
    BackboneVars vars = BackboneVars::bind(scratch, backbone);
    token_sets.push_back(scratch.val(backbone_forward(scratch, img, vars, backbone.cfg)));
  }
  ad::Tape tape;
  HeadVars hv = HeadVars::bind(tape, head);
  std::vector<ad::Var> slices;
  for (ad::Mat& m : token_sets) slices.push_back(tape.leaf(std::move(m)));
  ad::Var w = slice_weights(tape, relative_features(tape, slices), hv.attention_weight);
  const ad::Mat& wm = tape.val(w);
  const int grid_w = backbone.cfg.input_w / backbone.cfg.patch;
  std::vector<PatchWeightRow> rows;
  rows.reserve(static_cast<std::size_t>(backbone.cfg.patches()));
  for (int i = 0; i < backbone.cfg.patches(); ++i) {
    PatchWeightRow r;
    r.patch_row = i / grid_w;
    r.patch_col = i % grid_w;
    for (Eigen::Index s = 0; s < wm.cols(); ++s) r.weights.push_back(wm(i + 2, s));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace forestlpr

#endif
