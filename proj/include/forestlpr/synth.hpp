#ifndef FORESTLPR_SYNTH_HPP
#define FORESTLPR_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "forestlpr/error.hpp"
#include "forestlpr/geometry.hpp"
#include "forestlpr/pcd_io.hpp"
#include "forestlpr/rng.hpp"

namespace forestlpr {

struct SynthParams {
  double scene_x = 200.0;
  double scene_y = 200.0;
  double tree_density = 0.02;        // trees per m^2 (dense forest preset)
  double understory_density = 0.05;  // noise points per m^2 below 1 m
  double terrain_amplitude = 2.0;    // total amplitude cap of the heightfield
  double ground_spacing = 0.5;       // terrain sample grid
  double submap_radius = 30.0;       // 60 m diameter submaps
  double submap_spacing = 5.0;       // along-trajectory distance between poses
  int passes = 2;
  double pass_offset = 0.7;          // lateral offset of revisit passes, <= 1 m
  double yaw_jitter = 0.05;          // radians, per-pose heading perturbation
  double reverse_fraction = 0.0;     // fraction of the second pass driven reversed
  double resample_sigma = 0.01;      // per-visit point noise, meters
  bool seasonal = false;             // re-randomize canopy points per pass
  double blind_sector_deg = 0.0;     // azimuth wedge removed from every scan
  double range_decay_start = 12.0;   // full density inside this range
  std::string sequence = "synth-00";

  static SynthParams dense() { return SynthParams{}; }

  static SynthParams sparse() {
    SynthParams p;
    p.tree_density = 0.005;
    p.understory_density = 0.02;
    return p;
  }

  void validate() const {
    if (!(scene_x > 0 && scene_y > 0)) throw ConfigError("synth: scene size must be > 0");
    if (tree_density < 0 || understory_density < 0)
      throw ConfigError("synth: densities must be >= 0");
    if (!(submap_radius > 0 && submap_spacing > 0))
      throw ConfigError("synth: submap radius/spacing must be > 0");
    if (passes < 1) throw ConfigError("synth: passes must be >= 1");
    if (!(reverse_fraction >= 0.0 && reverse_fraction <= 1.0))
      throw ConfigError("synth: reverse_fraction must be in [0, 1]");
  }
};

struct SynthTree {
  double x = 0.0, y = 0.0;
  double trunk_radius = 0.2;  // 0.1 - 0.4
  double height = 12.0;       // 8 - 20
  std::uint64_t id = 0;
};

struct ForestScene {
  SynthParams params;
  std::uint64_t seed = 0;
  // Terrain: sum of <= 5 low-frequency sinusoids.
  int terrain_components = 0;
  double amp[5] = {};
  double freq_x[5] = {};
  double freq_y[5] = {};
  double phase[5] = {};
  std::vector<SynthTree> trees;

  double terrain_height(double x, double y) const {
    double z = 0.0;
    for (int k = 0; k < terrain_components; ++k) {
      z += amp[k] * std::sin(freq_x[k] * x + freq_y[k] * y + phase[k]);
    }
    return z;
  }
};

namespace detail {

inline std::size_t poisson_draw(Rng& rng, double lambda) {
  // Knuth's method in chunks so exp() never underflows.
  std::size_t total = 0;
  while (lambda > 0.0) {
    const double chunk = std::min(lambda, 400.0);
    lambda -= chunk;
    const double limit = std::exp(-chunk);
    double prod = rng.uniform();
    std::size_t k = 0;
    while (prod > limit) {
      ++k;
      prod *= rng.uniform();
    }
    total += k;
  }
  return total;
}

}  // namespace detail

inline ForestScene generate_scene(std::uint64_t seed, const SynthParams& params) {
  params.validate();
  ForestScene scene;
  scene.params = params;
  scene.seed = seed;
  Rng rng = Rng(seed).fork(0x5ce9e);

  scene.terrain_components = params.terrain_amplitude > 0.0 ? 4 : 0;
  double amp_budget = params.terrain_amplitude;
  constexpr double kTwoPi = 6.283185307179586477;
  for (int k = 0; k < scene.terrain_components; ++k) {
    const double a = (k + 1 == scene.terrain_components)
                         ? amp_budget
                         : amp_budget * rng.uniform(0.2, 0.5);
    amp_budget -= a;
    scene.amp[k] = a;
    const double wavelength = rng.uniform(40.0, 120.0);
    const double dir = rng.uniform(0.0, kTwoPi);
    scene.freq_x[k] = kTwoPi / wavelength * std::cos(dir);
    scene.freq_y[k] = kTwoPi / wavelength * std::sin(dir);
    scene.phase[k] = rng.uniform(0.0, kTwoPi);
  }

  const double area = params.scene_x * params.scene_y;
  const std::size_t target = detail::poisson_draw(rng, params.tree_density * area);
  scene.trees.reserve(target);
  std::size_t attempts = 0;
  while (scene.trees.size() < target && attempts < target * 40 + 1000) {
    ++attempts;
    SynthTree t;
    t.x = rng.uniform(-params.scene_x / 2, params.scene_x / 2);
    t.y = rng.uniform(-params.scene_y / 2, params.scene_y / 2);
    t.trunk_radius = rng.uniform(0.1, 0.4);
    t.height = rng.uniform(8.0, 20.0);
    t.id = scene.trees.size();
    bool clash = false;
    for (const SynthTree& o : scene.trees) {
      const double dx = t.x - o.x, dy = t.y - o.y;
      const double min_sep = t.trunk_radius + o.trunk_radius + 0.2;
      if (dx * dx + dy * dy < min_sep * min_sep) {
        clash = true;
        break;
      }
    }
    if (!clash) scene.trees.push_back(t);
  }
  return scene;
}

struct TrajectoryPose {
  double x = 0.0, y = 0.0, yaw = 0.0;
  int pass = 0;
  bool reversed = false;
  double timestamp = 0.0;
};

// Closed elliptical loop traversed `passes` times; revisit passes are offset
// laterally and yaw-jittered, and a trailing fraction of the second pass can
// be driven in the reverse heading.
inline std::vector<TrajectoryPose> make_loop_trajectory(const ForestScene& scene) {
  const SynthParams& p = scene.params;
  const double rx = 0.35 * p.scene_x;
  const double ry = 0.35 * p.scene_y;
  const double circumference = 3.14159265358979323846 * 2.0 *
                               std::sqrt(0.5 * (rx * rx + ry * ry));
  const int per_pass = std::max(4, static_cast<int>(circumference / p.submap_spacing));
  Rng rng = Rng(scene.seed).fork(0x7a17);

  std::vector<TrajectoryPose> out;
  double timestamp = 0.0;
  for (int pass = 0; pass < p.passes; ++pass) {
    const double offset = pass == 0 ? 0.0 : p.pass_offset;
    for (int i = 0; i < per_pass; ++i) {
      const double theta = 6.283185307179586477 * i / per_pass;
      TrajectoryPose tp;
      tp.x = (rx + offset) * std::cos(theta);
      tp.y = (ry + offset) * std::sin(theta);
      // Heading = loop tangent.
      tp.yaw = std::atan2((ry + offset) * std::cos(theta), -(rx + offset) * std::sin(theta));
      if (pass > 0) tp.yaw += rng.gaussian() * p.yaw_jitter;
      tp.pass = pass;
      if (pass == 1 && p.reverse_fraction > 0.0 &&
          i >= per_pass - static_cast<int>(p.reverse_fraction * per_pass)) {
        tp.reversed = true;
        tp.yaw += 3.14159265358979323846;
      }
      tp.timestamp = timestamp;
      timestamp += 10.0;
      out.push_back(tp);
    }
  }
  return out;
}

struct SyntheticSubmap {
  std::string id;
  int pass = 0;
  bool reversed = false;
  TimedPose pose;
  PointCloud cloud;  // sensor-local frame
};

namespace detail {

struct WorldPoints {
  PointCloud cloud;
  std::vector<double> keep_u;   // per-point deterministic threshold draw
  std::vector<bool> is_canopy;  // canopy points swap per pass in seasonal mode
};

inline void add_point(WorldPoints& w, double x, double y, double z, double u, bool canopy) {
  w.cloud.points.push_back(Point3{x, y, z});
  w.keep_u.push_back(u);
  w.is_canopy.push_back(canopy);
}

inline void generate_canopy(WorldPoints& w, const ForestScene& scene, const SynthTree& t,
                            std::uint64_t salt) {
  Rng rng = Rng(scene.seed).fork(0xca0001 + t.id * 977 + salt);
  const double base_z = scene.terrain_height(t.x, t.y);
  const double canopy_lo = 5.0;
  if (t.height <= canopy_lo) return;
  const double canopy_r = rng.uniform(1.0, 2.5);
  const int n = 60;
  for (int i = 0; i < n; ++i) {
    const double ang = rng.uniform(0.0, 6.283185307179586477);
    const double rad = canopy_r * std::sqrt(rng.uniform());
    const double h = rng.uniform(canopy_lo, t.height);
    add_point(w, t.x + rad * std::cos(ang), t.y + rad * std::sin(ang), base_z + h,
              rng.uniform(), true);
  }
}

// Scene-deterministic world point set. Base geometry (terrain, trunks,
// understory) never changes; canopy regenerates per pass in seasonal mode.
inline WorldPoints build_world_points(const ForestScene& scene, int pass) {
  const SynthParams& p = scene.params;
  WorldPoints w;

  Rng ground_rng = Rng(scene.seed).fork(0x9d0001);
  const int nx = static_cast<int>(p.scene_x / p.ground_spacing);
  const int ny = static_cast<int>(p.scene_y / p.ground_spacing);
  for (int iy = 0; iy <= ny; ++iy) {
    for (int ix = 0; ix <= nx; ++ix) {
      const double x = -p.scene_x / 2 + ix * p.ground_spacing;
      const double y = -p.scene_y / 2 + iy * p.ground_spacing;
      add_point(w, x, y, scene.terrain_height(x, y), ground_rng.uniform(), false);
    }
  }

  for (const SynthTree& t : scene.trees) {
    Rng trunk_rng = Rng(scene.seed).fork(0x720001 + t.id * 977);
    const double base_z = scene.terrain_height(t.x, t.y);
    const int rings = static_cast<int>(t.height / 0.25);
    for (int r = 0; r <= rings; ++r) {
      const double h = r * 0.25;
      const double ang = trunk_rng.uniform(0.0, 6.283185307179586477);
      add_point(w, t.x + t.trunk_radius * std::cos(ang), t.y + t.trunk_radius * std::sin(ang),
                base_z + h, trunk_rng.uniform(), false);
    }
    generate_canopy(w, scene, t, p.seasonal ? static_cast<std::uint64_t>(pass) * 7919 : 0);
  }

  Rng under_rng = Rng(scene.seed).fork(0x0b0001);
  const std::size_t n_under =
      poisson_draw(under_rng, p.understory_density * p.scene_x * p.scene_y);
  for (std::size_t i = 0; i < n_under; ++i) {
    const double x = under_rng.uniform(-p.scene_x / 2, p.scene_x / 2);
    const double y = under_rng.uniform(-p.scene_y / 2, p.scene_y / 2);
    add_point(w, x, y, scene.terrain_height(x, y) + under_rng.uniform(0.0, 1.0),
              under_rng.uniform(), false);
  }
  return w;
}

}  // namespace detail

inline std::vector<SyntheticSubmap> sample_submaps(const ForestScene& scene,
                                                   const std::vector<TrajectoryPose>& trajectory) {
  const SynthParams& p = scene.params;
  std::vector<SyntheticSubmap> out;
  out.reserve(trajectory.size());

  int cached_pass = -1;
  detail::WorldPoints world;
  PlanarIndex index;

  const double wedge = p.blind_sector_deg * 3.14159265358979323846 / 180.0;

  for (std::size_t si = 0; si < trajectory.size(); ++si) {
    const TrajectoryPose& tp = trajectory[si];
    if (tp.pass != cached_pass) {
      world = detail::build_world_points(scene, tp.pass);
      index = PlanarIndex(world.cloud, 5.0);
      cached_pass = tp.pass;
    }

    SyntheticSubmap sm;
    sm.pass = tp.pass;
    sm.reversed = tp.reversed;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", si);
    sm.id = p.sequence + "_" + buf;
    sm.pose.timestamp = tp.timestamp;
    sm.pose.pose.tx = tp.x;
    sm.pose.pose.ty = tp.y;
    sm.pose.pose.tz = scene.terrain_height(tp.x, tp.y) + 1.0;
    sm.pose.pose.qw = std::cos(tp.yaw / 2);
    sm.pose.pose.qz = std::sin(tp.yaw / 2);

    Rng noise_rng = Rng(scene.seed).fork(0x50b001 + si * 3571);
    const Pose to_local = sm.pose.pose.inverse();
    const auto neighbors =
        index.radius_neighbors(Point3{tp.x, tp.y, 0.0}, p.submap_radius);
    for (const auto& [pi, range] : neighbors) {
      // Range-decaying sampling density with a scene-deterministic draw, so
      // identical poses select identical points.
      const double keep = range <= p.range_decay_start
                              ? 1.0
                              : (p.range_decay_start / range) * (p.range_decay_start / range);
      if (world.keep_u[pi] >= keep) continue;
      Point3 wp = world.cloud[pi];
      if (p.resample_sigma > 0.0) {
        wp.x += noise_rng.gaussian() * p.resample_sigma;
        wp.y += noise_rng.gaussian() * p.resample_sigma;
        wp.z += noise_rng.gaussian() * p.resample_sigma;
      }
      const Point3 lp = to_local.apply(wp);
      if (wedge > 0.0) {
        // Blind wedge centered on the -x axis of the sensor frame.
        const double az = std::atan2(lp.y, lp.x);
        const double d = std::abs(std::remainder(az - 3.14159265358979323846,
                                                 6.283185307179586477));
        if (d < wedge / 2) continue;
      }
      sm.cloud.points.push_back(lp);
    }
    out.push_back(std::move(sm));
  }
  return out;
}

}  // namespace forestlpr

#endif
