#ifndef FORESTLPR_BACKBONE_HPP
#define FORESTLPR_BACKBONE_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "forestlpr/bev.hpp"
#include "forestlpr/error.hpp"
#include "forestlpr/rng.hpp"
#include "forestlpr/tape.hpp"

namespace forestlpr {

struct BackboneConfig {
  int patch = 16;
  int channels = 384;  // C
  int layers = 12;     // L
  int heads = 6;
  int level_low = 2;   // 1-based encoder layer indices
  int level_mid = 7;
  int level_high = 12;
  int input_h = 480;
  int input_w = 480;

  static BackboneConfig toy() {
    BackboneConfig c;
    c.patch = 8;
    c.channels = 32;
    c.layers = 4;
    c.heads = 2;
    c.level_low = 2;
    c.level_mid = 3;
    c.level_high = 4;
    c.input_h = 64;
    c.input_w = 64;
    return c;
  }

  int patches() const { return (input_h / patch) * (input_w / patch); }
  int tokens() const { return patches() + 2; }
  int head_dim() const { return channels / heads; }

  void validate() const {
    if (patch < 1 || channels < 1 || layers < 1 || heads < 1)
      throw ConfigError("backbone: sizes must be >= 1");
    if (input_h % patch != 0 || input_w % patch != 0)
      throw ConfigError("backbone: input H and W must be divisible by the patch size");
    if (channels % heads != 0)
      throw ConfigError("backbone: channels must be divisible by heads");
    if (!(1 <= level_low && level_low < level_mid && level_mid < level_high &&
          level_high <= layers))
      throw ConfigError("backbone: require 1 <= low < mid < high <= layers");
  }

  bool operator==(const BackboneConfig&) const = default;
};

struct EncoderLayerParams {
  ad::Mat ln1_gamma, ln1_beta;
  ad::Mat wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Mat ln2_gamma, ln2_beta;
  ad::Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct BackboneParams {
  BackboneConfig cfg;
  ad::Mat patch_weight;  // p^2 x C input adapter for 1-channel patches
  ad::Mat patch_bias;    // 1 x C
  ad::Mat cls_token;     // 1 x C
  ad::Mat dist_token;    // 1 x C
  ad::Mat pos_embed;     // (N+2) x C
  std::vector<EncoderLayerParams> layers;

  static BackboneParams random_init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    auto tn = [&rng](Eigen::Index r, Eigen::Index c) {
      ad::Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.truncated_normal(0.02);
      return m;
    };
    const int C = cfg.channels;
    BackboneParams p;
    p.cfg = cfg;
    p.patch_weight = tn(cfg.patch * cfg.patch, C);
    p.patch_bias = ad::Mat::Zero(1, C);
    p.cls_token = tn(1, C);
    p.dist_token = tn(1, C);
    p.pos_embed = tn(cfg.tokens(), C);
    p.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (EncoderLayerParams& l : p.layers) {
      l.ln1_gamma = ad::Mat::Ones(1, C);
      l.ln1_beta = ad::Mat::Zero(1, C);
      l.wq = tn(C, C);
      l.bq = ad::Mat::Zero(1, C);
      l.wk = tn(C, C);
      l.bk = ad::Mat::Zero(1, C);
      l.wv = tn(C, C);
      l.bv = ad::Mat::Zero(1, C);
      l.wo = tn(C, C);
      l.bo = ad::Mat::Zero(1, C);
      l.ln2_gamma = ad::Mat::Ones(1, C);
      l.ln2_beta = ad::Mat::Zero(1, C);
      l.mlp_w1 = tn(C, 4 * C);
      l.mlp_b1 = ad::Mat::Zero(1, 4 * C);
      l.mlp_w2 = tn(4 * C, C);
      l.mlp_b2 = ad::Mat::Zero(1, C);
    }
    return p;
  }

  // Tensors in declaration order; this order defines the model file layout.
  template <typename F>
  void for_each_tensor(F&& f) {
    f(patch_weight);
    f(patch_bias);
    f(cls_token);
    f(dist_token);
    f(pos_embed);
    for (EncoderLayerParams& l : layers) {
      f(l.ln1_gamma);
      f(l.ln1_beta);
      f(l.wq);
      f(l.bq);
      f(l.wk);
      f(l.bk);
      f(l.wv);
      f(l.bv);
      f(l.wo);
      f(l.bo);
      f(l.ln2_gamma);
      f(l.ln2_beta);
      f(l.mlp_w1);
      f(l.mlp_b1);
      f(l.mlp_w2);
      f(l.mlp_b2);
    }
  }
};

// Tape-bound view of the parameters; Var order mirrors for_each_tensor.
struct BackboneVars {
  ad::Var patch_weight, patch_bias, cls_token, dist_token, pos_embed;
  struct Layer {
    ad::Var ln1_gamma, ln1_beta, wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Var ln2_gamma, ln2_beta, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  std::vector<Layer> layers;
  std::vector<ad::Var> all;  // same order as for_each_tensor

  static BackboneVars bind(ad::Tape& tape, BackboneParams& params) {
    BackboneVars v;
    params.for_each_tensor([&](ad::Mat& m) { v.all.push_back(tape.leaf(m)); });
    std::size_t i = 0;
    auto next = [&]() { return v.all[i++]; };
    v.patch_weight = next();
    v.patch_bias = next();
    v.cls_token = next();
    v.dist_token = next();
    v.pos_embed = next();
    v.layers.resize(params.layers.size());
    for (Layer& l : v.layers) {
      l.ln1_gamma = next();
      l.ln1_beta = next();
      l.wq = next();
      l.bq = next();
      l.wk = next();
      l.bk = next();
      l.wv = next();
      l.bv = next();
      l.wo = next();
      l.bo = next();
      l.ln2_gamma = next();
      l.ln2_beta = next();
      l.mlp_w1 = next();
      l.mlp_b1 = next();
      l.mlp_w2 = next();
      l.mlp_b2 = next();
    }
    return v;
  }
};

// Flatten the image into per-patch rows (N x p^2), patches enumerated
// row-major over the patch grid, pixels row-major within the patch.
inline ad::Mat image_to_patch_rows(const DensityImage& image, const BackboneConfig& cfg) {
  if (image.height != cfg.input_h || image.width != cfg.input_w) {
    throw ConfigError("patch_embed: image is " + std::to_string(image.width) + "x" +
                      std::to_string(image.height) + " but backbone expects " +
                      std::to_string(cfg.input_w) + "x" + std::to_string(cfg.input_h));
  }
  const int p = cfg.patch;
  const int gw = cfg.input_w / p, gh = cfg.input_h / p;
  ad::Mat rows(cfg.patches(), p * p);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      const int row = py * gw + px;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          rows(row, y * p + x) = image.at(px * p + x, py * p + y);
    }
  }
  return rows;
}

// (N+2) x C token matrix: linear patch embedding, class and distillation
// tokens prepended, positional embeddings added.
inline ad::Var patch_embed(ad::Tape& tape, const DensityImage& image, const BackboneVars& vars,
                           const BackboneConfig& cfg) {
  ad::Var patches = tape.leaf(image_to_patch_rows(image, cfg));
  ad::Var embedded =
      tape.add_rowvec(tape.matmul(patches, vars.patch_weight), vars.patch_bias);
  ad::Var tokens = tape.concat_rows({vars.cls_token, vars.dist_token, embedded});
  return tape.add(tokens, vars.pos_embed);
}

// Pre-norm encoder: x + MSA(LN(x)), then x + MLP(LN(x)). Returns all L layer
// outputs so multiple levels can be tapped.
inline std::vector<ad::Var> encoder_forward(ad::Tape& tape, ad::Var tokens,
                                            const BackboneVars& vars,
                                            const BackboneConfig& cfg) {
  const int dh = cfg.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outputs;
  outputs.reserve(static_cast<std::size_t>(cfg.layers));
  ad::Var x = tokens;
  for (int li = 0; li < cfg.layers; ++li) {
    const BackboneVars::Layer& l = vars.layers[static_cast<std::size_t>(li)];
    ad::Var n1 = tape.layernorm_rows(x, l.ln1_gamma, l.ln1_beta);
    ad::Var q = tape.add_rowvec(tape.matmul(n1, l.wq), l.bq);
    ad::Var k = tape.add_rowvec(tape.matmul(n1, l.wk), l.bk);
    ad::Var v = tape.add_rowvec(tape.matmul(n1, l.wv), l.bv);
    std::vector<ad::Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      ad::Var qh = tape.slice_cols(q, h * dh, dh);
      ad::Var kh = tape.slice_cols(k, h * dh, dh);
      ad::Var vh = tape.slice_cols(v, h * dh, dh);
      ad::Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), att_scale));
      head_outs.push_back(tape.matmul(attn, vh));
    }
    ad::Var msa = tape.add_rowvec(tape.matmul(tape.concat_cols(head_outs), l.wo), l.bo);
    x = tape.add(x, msa);
    ad::Var n2 = tape.layernorm_rows(x, l.ln2_gamma, l.ln2_beta);
    ad::Var hidden = tape.gelu(tape.add_rowvec(tape.matmul(n2, l.mlp_w1), l.mlp_b1));
    ad::Var mlp = tape.add_rowvec(tape.matmul(hidden, l.mlp_w2), l.mlp_b2);
    x = tape.add(x, mlp);
    if (!tape.val(x).allFinite()) {
      throw NumericError("encoder_forward: non-finite output at layer " +
                         std::to_string(li + 1));
    }
    outputs.push_back(x);
  }
  return outputs;
}

// [P_L | P_M | P_H] -> (N+2) x 3C.
inline ad::Var multi_level_concat(ad::Tape& tape, const std::vector<ad::Var>& layer_outputs,
                                  const BackboneConfig& cfg) {
  return tape.concat_cols({layer_outputs[static_cast<std::size_t>(cfg.level_low - 1)],
                           layer_outputs[static_cast<std::size_t>(cfg.level_mid - 1)],
                           layer_outputs[static_cast<std::size_t>(cfg.level_high - 1)]});
}

// Full per-image token set P in (N+2) x 3C.
inline ad::Var backbone_forward(ad::Tape& tape, const DensityImage& image,
                                const BackboneVars& vars, const BackboneConfig& cfg) {
  ad::Var tokens = patch_embed(tape, image, vars, cfg);
  return multi_level_concat(tape, encoder_forward(tape, tokens, vars, cfg), cfg);
}

}  // namespace forestlpr

#endif
