#ifndef FORESTLPR_PREPROCESS_HPP
#define FORESTLPR_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "forestlpr/error.hpp"
#include "forestlpr/geometry.hpp"

namespace forestlpr {

struct PreprocessConfig {
  double ground_cell = 0.3;     // terrain grid cell size
  double ground_tolerance = 0.2;  // vertical distance to surface for a ground label
  double radius = 3.0;          // initial ground-neighbor search radius
  double radius_step = 1.0;     // growth per retry
  double radius_max = 10.0;
  double crop_lo = 1.0;         // half-open band [crop_lo, crop_hi)
  double crop_hi = 6.0;

  void validate() const {
    if (!(ground_cell > 0.0)) throw ConfigError("preprocess.ground_cell must be > 0");
    if (!(ground_tolerance > 0.0)) throw ConfigError("preprocess.ground_tolerance must be > 0");
    if (!(radius > 0.0 && radius <= radius_max))
      throw ConfigError("preprocess.radius must satisfy 0 < radius <= radius_max");
    if (!(radius_step > 0.0)) throw ConfigError("preprocess.radius_step must be > 0");
    if (!(crop_lo < crop_hi)) throw ConfigError("preprocess.crop_lo must be < crop_hi");
  }
};

struct GroundLabeling {
  std::vector<std::size_t> ground;
  std::vector<std::size_t> non_ground;
};

// ---------------------------------------------------------------------------
// Ground surface estimator: per-cell minimum grid, empty cells filled from the
// nearest populated cell, 3x3 median smoothing, bilinear interpolation between
// cell centers. Kept behind a small interface so a cloth-simulation variant
// can slot in later.
// ---------------------------------------------------------------------------

class GroundSurface {
 public:
  GroundSurface(const PointCloud& cloud, double cell) : cell_(cell) {
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_x = -min_x, max_y = -min_y;
    for (const Point3& p : cloud.points) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
    origin_x_ = min_x;
    origin_y_ = min_y;
    nx_ = static_cast<int>(std::floor((max_x - min_x) / cell_)) + 1;
    ny_ = static_cast<int>(std::floor((max_y - min_y) / cell_)) + 1;

    const double none = std::numeric_limits<double>::quiet_NaN();
    grid_.assign(static_cast<std::size_t>(nx_) * ny_, none);
    for (const Point3& p : cloud.points) {
      const int cx = cell_x(p.x), cy = cell_y(p.y);
      double& g = grid_[idx(cx, cy)];
      if (std::isnan(g) || p.z < g) g = p.z;
    }
    fill_empty_cells();
    median_smooth();
  }

  // Surface height at (x, y): bilinear interpolation between cell centers,
  // clamped to the grid border outside it.
  double height_at(double x, double y) const {
    const double gx = (x - origin_x_) / cell_ - 0.5;
    const double gy = (y - origin_y_) / cell_ - 0.5;
    const double fx = std::clamp(gx, 0.0, static_cast<double>(nx_ - 1));
    const double fy = std::clamp(gy, 0.0, static_cast<double>(ny_ - 1));
    const int x0 = std::min(static_cast<int>(fx), nx_ - 1);
    const int y0 = std::min(static_cast<int>(fy), ny_ - 1);
    const int x1 = std::min(x0 + 1, nx_ - 1);
    const int y1 = std::min(y0 + 1, ny_ - 1);
    const double ax = fx - x0, ay = fy - y0;
    const double v00 = grid_[idx(x0, y0)], v10 = grid_[idx(x1, y0)];
    const double v01 = grid_[idx(x0, y1)], v11 = grid_[idx(x1, y1)];
    return (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 + (1 - ax) * ay * v01 +
           ax * ay * v11;
  }

 private:
  int cell_x(double x) const {
    return std::clamp(static_cast<int>(std::floor((x - origin_x_) / cell_)), 0, nx_ - 1);
  }
  int cell_y(double y) const {
    return std::clamp(static_cast<int>(std::floor((y - origin_y_) / cell_)), 0, ny_ - 1);
  }
  std::size_t idx(int cx, int cy) const {
    return static_cast<std::size_t>(cy) * nx_ + cx;
  }

  void fill_empty_cells() {
    // Multi-source BFS from populated cells; empty cells inherit the value of
    // the nearest populated cell (4-connected grid distance).
    std::deque<std::pair<int, int>> q;
    for (int cy = 0; cy < ny_; ++cy)
      for (int cx = 0; cx < nx_; ++cx)
        if (!std::isnan(grid_[idx(cx, cy)])) q.emplace_back(cx, cy);
    while (!q.empty()) {
      auto [cx, cy] = q.front();
      q.pop_front();
      const double v = grid_[idx(cx, cy)];
      const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nx = cx + dx[k], ny = cy + dy[k];
        if (nx < 0 || ny < 0 || nx >= nx_ || ny >= ny_) continue;
        if (std::isnan(grid_[idx(nx, ny)])) {
          grid_[idx(nx, ny)] = v;
          q.emplace_back(nx, ny);
        }
      }
    }
  }

  void median_smooth() {
    std::vector<double> smoothed(grid_.size());
    std::vector<double> window;
    window.reserve(9);
    for (int cy = 0; cy < ny_; ++cy) {
      for (int cx = 0; cx < nx_; ++cx) {
        window.clear();
        for (int oy = -1; oy <= 1; ++oy) {
          for (int ox = -1; ox <= 1; ++ox) {
            const int x = cx + ox, y = cy + oy;
            if (x < 0 || y < 0 || x >= nx_ || y >= ny_) continue;
            window.push_back(grid_[idx(x, y)]);
          }
        }
        std::nth_element(window.begin(), window.begin() + window.size() / 2, window.end());
        smoothed[idx(cx, cy)] = window[window.size() / 2];
      }
    }
    grid_.swap(smoothed);
  }

  double cell_;
  double origin_x_ = 0.0, origin_y_ = 0.0;
  int nx_ = 0, ny_ = 0;
  std::vector<double> grid_;
};

inline GroundLabeling segment_ground(const PointCloud& cloud, const PreprocessConfig& cfg) {
  cfg.validate();
  if (cloud.size() < 4) {
    throw DegenerateInputError("segment_ground: need at least 4 points, got " +
                               std::to_string(cloud.size()));
  }
  GroundSurface surface(cloud, cfg.ground_cell);
  GroundLabeling lab;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud[i];
    if (std::abs(p.z - surface.height_at(p.x, p.y)) <= cfg.ground_tolerance) {
      lab.ground.push_back(i);
    } else {
      lab.non_ground.push_back(i);
    }
  }
  return lab;
}

// Height offset removal. For each non-ground point, subtract the inverse
// squared-distance weighted average elevation of its ground neighbors within
// radius R, growing R by radius_step until neighbors are found or radius_max
// is exceeded. Points that never find a ground neighbor are dropped.
inline PointCloud normalize_height(const PointCloud& cloud, const GroundLabeling& labeling,
                                   const PreprocessConfig& cfg) {
  cfg.validate();
  PointCloud ground_cloud;
  ground_cloud.points.reserve(labeling.ground.size());
  for (std::size_t i : labeling.ground) ground_cloud.points.push_back(cloud[i]);
  PlanarIndex index(ground_cloud, std::max(cfg.radius, cfg.ground_cell));

  PointCloud out;
  out.points.reserve(labeling.non_ground.size());
  for (std::size_t i : labeling.non_ground) {
    const Point3& p = cloud[i];
    std::vector<std::pair<std::size_t, double>> neighbors;
    for (double r = cfg.radius; r <= cfg.radius_max + 1e-12; r += cfg.radius_step) {
      neighbors = index.radius_neighbors(p, r);
      if (!neighbors.empty()) break;
    }
    if (neighbors.empty()) continue;

    // Coincident neighbors dominate as the d^-2 weight diverges; use their
    // elevation directly.
    double zero_sum = 0.0;
    std::size_t zero_count = 0;
    for (const auto& [gi, d] : neighbors) {
      if (d == 0.0) {
        zero_sum += ground_cloud[gi].z;
        ++zero_count;
      }
    }
    double terrain;
    if (zero_count > 0) {
      terrain = zero_sum / static_cast<double>(zero_count);
    } else {
      double wsum = 0.0, wzsum = 0.0;
      for (const auto& [gi, d] : neighbors) {
        const double w = 1.0 / (d * d);
        wsum += w;
        wzsum += w * ground_cloud[gi].z;
      }
      terrain = wzsum / wsum;
    }
    out.points.push_back(Point3{p.x, p.y, p.z - terrain});
  }
  return out;
}

inline PointCloud crop_band(const PointCloud& cloud, double z_lo, double z_hi) {
  if (!(z_lo < z_hi)) throw ConfigError("crop_band: z_lo must be < z_hi");
  PointCloud out;
  for (const Point3& p : cloud.points) {
    if (p.z >= z_lo && p.z < z_hi) out.points.push_back(p);
  }
  return out;
}

inline PointCloud preprocess(const PointCloud& cloud, const PreprocessConfig& cfg) {
  const GroundLabeling lab = segment_ground(cloud, cfg);
  const PointCloud normalized = normalize_height(cloud, lab, cfg);
  return crop_band(normalized, cfg.crop_lo, cfg.crop_hi);
}

}  // namespace forestlpr

#endif
