#ifndef FORESTLPR_MODEL_HPP
#define FORESTLPR_MODEL_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "forestlpr/backbone.hpp"
#include "forestlpr/interaction.hpp"

namespace forestlpr {

struct ModelParams {
  BackboneParams backbone;
  HeadParams head;

  static ModelParams random_init(const BackboneConfig& bcfg, const HeadConfig& hcfg,
                                 Rng& rng) {
    ModelParams m;
    m.backbone = BackboneParams::random_init(bcfg, rng);
    m.head = HeadParams::random_init(hcfg, bcfg.channels, rng);
    return m;
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    backbone.for_each_tensor(f);
    head.for_each_tensor(f);
  }
};

// Model file: magic "FLPR-M", u32 version, config block, f32 LE tensors in
// declaration order.
namespace detail {

constexpr char kModelMagic[6] = {'F', 'L', 'P', 'R', '-', 'M'};
constexpr std::uint32_t kModelVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw ParseError(path + ": truncated file");
  return v;
}

inline void write_f32(std::ostream& out, float v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

}  // namespace detail

inline void save_model(const std::string& path, ModelParams& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out.write(detail::kModelMagic, 6);
  detail::write_u32(out, detail::kModelVersion);
  const BackboneConfig& b = model.backbone.cfg;
  for (int v : {b.patch, b.channels, b.layers, b.heads, b.level_low, b.level_mid,
                b.level_high, b.input_h, b.input_w, model.head.cfg.descriptor_dim}) {
    detail::write_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::write_f32(out, static_cast<float>(model.head.cfg.gem_exponent));
  model.for_each_tensor([&out](ad::Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        detail::write_f32(out, static_cast<float>(m(i, j)));
  });
  if (!out) throw Error(path + ": write failed");
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, detail::kModelMagic, 6) != 0) {
    throw ParseError(path + ": not a model file (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(in, path);
  if (version != detail::kModelVersion) {
    throw ParseError(path + ": unsupported model file version " + std::to_string(version) +
                     " (expected " + std::to_string(detail::kModelVersion) + ")");
  }
  BackboneConfig bcfg;
  HeadConfig hcfg;
  auto rd = [&]() { return static_cast<int>(detail::read_u32(in, path)); };
  bcfg.patch = rd();
  bcfg.channels = rd();
  bcfg.layers = rd();
  bcfg.heads = rd();
  bcfg.level_low = rd();
  bcfg.level_mid = rd();
  bcfg.level_high = rd();
  bcfg.input_h = rd();
  bcfg.input_w = rd();
  hcfg.descriptor_dim = rd();
  float gem = 0.0f;
  in.read(reinterpret_cast<char*>(&gem), 4);
  if (!in) throw ParseError(path + ": truncated file");
  hcfg.gem_exponent = gem;
  bcfg.validate();
  hcfg.validate();

  ModelParams model;
  model.backbone.cfg = bcfg;
  model.head.cfg = hcfg;
  // Allocate tensors at the configured shapes, then fill in order.
  Rng rng(0);
  model.backbone = BackboneParams::random_init(bcfg, rng);
  model.head = HeadParams::random_init(hcfg, bcfg.channels, rng);
  model.for_each_tensor([&in, &path](ad::Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        float v;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw ParseError(path + ": truncated tensor data");
        m(i, j) = v;
      }
    }
  });
  return model;
}

}  // namespace forestlpr

#endif
