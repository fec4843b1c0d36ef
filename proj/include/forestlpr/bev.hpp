#ifndef FORESTLPR_BEV_HPP
#define FORESTLPR_BEV_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "forestlpr/error.hpp"
#include "forestlpr/geometry.hpp"
#include "forestlpr/preprocess.hpp"

namespace forestlpr {

// Row-major single-channel image with values in [0,1].
struct DensityImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // height * width, row-major
  double res = 0.0;            // meters per pixel (0 for resized images)
  double extent = 0.0;         // grid spans [-extent, extent)

  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }
  double& at(int u, int v) { return values[static_cast<std::size_t>(v) * width + u]; }
};

struct BevConfig {
  int slices = 5;          // S
  double slice_height = 1.0;  // delta-h, meters
  double z_lo = 1.0;       // bottom of the first slice band
  double res = 0.5;        // meters per cell
  double extent = 30.0;    // E, half-size of the grid
  int out_height = 480;    // network input H
  int out_width = 480;     // network input W
  bool elevation = false;  // density (default) vs elevation rasterization

  void validate() const {
    if (slices < 1) throw ConfigError("bev.slices must be >= 1");
    if (!(slice_height > 0.0)) throw ConfigError("bev.slice_height must be > 0");
    if (!(res > 0.0)) throw ConfigError("bev.res must be > 0");
    if (!(extent > 0.0)) throw ConfigError("bev.extent must be > 0");
    if (out_height < 1 || out_width < 1) throw ConfigError("bev.out size must be >= 1");
    const double dim = 2.0 * extent / res;
    if (std::abs(dim - std::round(dim)) > 1e-9) {
      throw ConfigError("bev: 2*extent/res must be an integer grid dimension");
    }
  }
};

struct BevStack {
  std::vector<DensityImage> images;  // S images of identical shape
  double z_lo = 0.0;
  double slice_height = 0.0;
};

// Slice j covers heights [z_lo + j*dh, z_lo + (j+1)*dh); points outside the
// banded range are dropped.
inline std::vector<PointCloud> slice_cloud(const PointCloud& cloud, double z_lo, double dh,
                                           int slices) {
  if (slices < 1) throw ConfigError("slice_cloud: slices must be >= 1");
  if (!(dh > 0.0)) throw ConfigError("slice_cloud: slice height must be > 0");
  std::vector<PointCloud> out(static_cast<std::size_t>(slices));
  for (const Point3& p : cloud.points) {
    const double f = (p.z - z_lo) / dh;
    if (f < 0.0) continue;
    const int j = static_cast<int>(std::floor(f));
    if (j >= 0 && j < slices) out[static_cast<std::size_t>(j)].points.push_back(p);
  }
  return out;
}

namespace detail {

inline int grid_dim(double res, double extent) {
  const double dim = 2.0 * extent / res;
  const double rounded = std::round(dim);
  if (std::abs(dim - rounded) > 1e-9) {
    throw ConfigError("rasterize: 2*extent/res must be an integer grid dimension");
  }
  return static_cast<int>(rounded);
}

// Min-max normalization shared by density and elevation images. A constant
// image maps to all zeros.
inline void min_max_normalize(std::vector<double>& v) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!(hi > lo)) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  const double range = hi - lo;
  for (double& x : v) x = (x - lo) / range;
}

}  // namespace detail

inline DensityImage rasterize_density(const PointCloud& slice, double res, double extent) {
  const int dim = detail::grid_dim(res, extent);
  DensityImage img;
  img.width = dim;
  img.height = dim;
  img.res = res;
  img.extent = extent;
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(dim) * dim, 0);
  for (const Point3& p : slice.points) {
    if (p.x < -extent || p.x >= extent || p.y < -extent || p.y >= extent) continue;
    const int u = static_cast<int>(std::floor((p.x + extent) / res));
    const int v = static_cast<int>(std::floor((p.y + extent) / res));
    if (u < 0 || v < 0 || u >= dim || v >= dim) continue;
    ++counts[static_cast<std::size_t>(v) * dim + u];
  }
  img.values.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    img.values[i] = std::log(static_cast<double>(counts[i]) + 1.0);
  }
  detail::min_max_normalize(img.values);
  return img;
}

inline DensityImage rasterize_elevation(const PointCloud& slice, double res, double extent) {
  const int dim = detail::grid_dim(res, extent);
  DensityImage img;
  img.width = dim;
  img.height = dim;
  img.res = res;
  img.extent = extent;
  const double none = -std::numeric_limits<double>::infinity();
  img.values.assign(static_cast<std::size_t>(dim) * dim, none);
  double band_min = std::numeric_limits<double>::infinity();
  for (const Point3& p : slice.points) {
    if (p.x < -extent || p.x >= extent || p.y < -extent || p.y >= extent) continue;
    const int u = static_cast<int>(std::floor((p.x + extent) / res));
    const int v = static_cast<int>(std::floor((p.y + extent) / res));
    if (u < 0 || v < 0 || u >= dim || v >= dim) continue;
    double& cell = img.values[static_cast<std::size_t>(v) * dim + u];
    cell = std::max(cell, p.z);
    band_min = std::min(band_min, p.z);
  }
  if (!std::isfinite(band_min)) band_min = 0.0;  // empty slice
  for (double& x : img.values) {
    if (!std::isfinite(x)) x = band_min;
  }
  detail::min_max_normalize(img.values);
  return img;
}

// Align-corners bilinear resampling.
inline DensityImage resize_bilinear(const DensityImage& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("resize_bilinear: output size must be >= 1");
  DensityImage out;
  out.width = out_w;
  out.height = out_h;
  out.extent = image.extent;
  out.values.resize(static_cast<std::size_t>(out_h) * out_w);
  const double sx = out_w > 1 ? static_cast<double>(image.width - 1) / (out_w - 1) : 0.0;
  const double sy = out_h > 1 ? static_cast<double>(image.height - 1) / (out_h - 1) : 0.0;
  for (int v = 0; v < out_h; ++v) {
    const double fy = v * sy;
    const int y0 = std::min(static_cast<int>(fy), image.height - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ay = fy - y0;
    for (int u = 0; u < out_w; ++u) {
      const double fx = u * sx;
      const int x0 = std::min(static_cast<int>(fx), image.width - 1);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double ax = fx - x0;
      out.at(u, v) = (1 - ax) * (1 - ay) * image.at(x0, y0) + ax * (1 - ay) * image.at(x1, y0) +
                     (1 - ax) * ay * image.at(x0, y1) + ax * ay * image.at(x1, y1);
    }
  }
  return out;
}

inline BevStack make_bev_stack(const PointCloud& cloud, const BevConfig& cfg) {
  cfg.validate();
  BevStack stack;
  stack.z_lo = cfg.z_lo;
  stack.slice_height = cfg.slice_height;
  const std::vector<PointCloud> slices =
      slice_cloud(cloud, cfg.z_lo, cfg.slice_height, cfg.slices);
  stack.images.reserve(slices.size());
  for (const PointCloud& s : slices) {
    DensityImage img = cfg.elevation ? rasterize_elevation(s, cfg.res, cfg.extent)
                                     : rasterize_density(s, cfg.res, cfg.extent);
    if (img.width != cfg.out_width || img.height != cfg.out_height) {
      img = resize_bilinear(img, cfg.out_height, cfg.out_width);
    }
    stack.images.push_back(std::move(img));
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Image dumps: PGM P5 (maxval 65535) and raw f32 LE with a u32 width/height
// header.
// ---------------------------------------------------------------------------

inline void save_pgm(const std::string& path, const DensityImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "P5\n" << img.width << " " << img.height << "\n65535\n";
  for (double v : img.values) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    const unsigned char bytes[2] = {static_cast<unsigned char>(q >> 8),
                                    static_cast<unsigned char>(q & 0xff)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
  }
}

inline void save_raw_f32(const std::string& path, const DensityImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  const std::uint32_t w = static_cast<std::uint32_t>(img.width);
  const std::uint32_t h = static_cast<std::uint32_t>(img.height);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  for (double v : img.values) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
}

inline DensityImage load_raw_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  std::uint32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in) throw ParseError(path + ": truncated raw image header");
  DensityImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.values.resize(static_cast<std::size_t>(w) * h);
  for (double& v : img.values) {
    float f;
    in.read(reinterpret_cast<char*>(&f), 4);
    if (!in) throw ParseError(path + ": truncated raw image data");
    v = f;
  }
  return img;
}

}  // namespace forestlpr

#endif
