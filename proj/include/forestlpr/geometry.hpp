#ifndef FORESTLPR_GEOMETRY_HPP
#define FORESTLPR_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "forestlpr/error.hpp"

namespace forestlpr {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

struct PointCloud {
  std::vector<Point3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Point3& operator[](std::size_t i) const { return points[i]; }
  Point3& operator[](std::size_t i) { return points[i]; }
};

// Unit quaternion (w,x,y,z), right-handed, active rotation.
struct Pose {
  double tx = 0.0, ty = 0.0, tz = 0.0;
  double qw = 1.0, qx = 0.0, qy = 0.0, qz = 0.0;

  static Pose identity() { return Pose{}; }

  double quat_norm() const {
    return std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
  }

  void normalize_quat() {
    const double n = quat_norm();
    if (n <= 0.0 || !std::isfinite(n)) {
      throw NumericError("pose quaternion has zero or non-finite norm");
    }
    qw /= n;
    qx /= n;
    qy /= n;
    qz /= n;
  }

  Point3 apply(const Point3& p) const {
    // R*p via quaternion sandwich, expanded.
    const double ww = qw * qw, xx = qx * qx, yy = qy * qy, zz = qz * qz;
    const double wx = qw * qx, wy = qw * qy, wz = qw * qz;
    const double xy = qx * qy, xz = qx * qz, yz = qy * qz;
    Point3 r;
    r.x = (ww + xx - yy - zz) * p.x + 2.0 * (xy - wz) * p.y + 2.0 * (xz + wy) * p.z + tx;
    r.y = 2.0 * (xy + wz) * p.x + (ww - xx + yy - zz) * p.y + 2.0 * (yz - wx) * p.z + ty;
    r.z = 2.0 * (xz - wy) * p.x + 2.0 * (yz + wx) * p.y + (ww - xx - yy + zz) * p.z + tz;
    return r;
  }

  Pose inverse() const {
    Pose inv;
    inv.qw = qw;
    inv.qx = -qx;
    inv.qy = -qy;
    inv.qz = -qz;
    const Point3 t = Pose{0, 0, 0, inv.qw, inv.qx, inv.qy, inv.qz}.apply(Point3{tx, ty, tz});
    inv.tx = -t.x;
    inv.ty = -t.y;
    inv.tz = -t.z;
    return inv;
  }
};

inline PointCloud rotate_z(const PointCloud& cloud, double angle) {
  if (!std::isfinite(angle)) throw ConfigError("rotate_z: angle must be finite");
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Point3& p : cloud.points) {
    out.points.push_back(Point3{p.x * c - p.y * s, p.x * s + p.y * c, p.z});
  }
  return out;
}

inline PointCloud transform(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Point3& p : cloud.points) out.points.push_back(pose.apply(p));
  return out;
}

// ---------------------------------------------------------------------------
// Occupied voxel set over an integer lattice, keyed hierarchically so that
// membership and count queries stay cheap for overlap computation.
// ---------------------------------------------------------------------------

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ull;
    };
    mix(static_cast<std::uint64_t>(k.x));
    mix(static_cast<std::uint64_t>(k.y));
    mix(static_cast<std::uint64_t>(k.z));
    return static_cast<std::size_t>(h);
  }
};

class VoxelSet {
 public:
  VoxelSet() = default;
  explicit VoxelSet(double edge) : edge_(edge) {
    if (!(edge > 0.0)) throw ConfigError("voxel edge must be > 0");
  }

  double edge() const { return edge_; }
  std::size_t size() const { return leaves_.size(); }
  bool empty() const { return leaves_.empty(); }

  void insert_point(const Point3& p) {
    insert_cell(VoxelKey{cell_of(p.x), cell_of(p.y), cell_of(p.z)});
  }

  void insert_cell(const VoxelKey& k) {
    if (leaves_.insert(k).second) {
      // Coarse parent at an 8x8x8 branching step above the leaves.
      nodes_[parent_of(k)]++;
    }
  }

  bool contains(const VoxelKey& k) const {
    auto it = nodes_.find(parent_of(k));
    if (it == nodes_.end()) return false;
    return leaves_.count(k) > 0;
  }

  template <typename F>
  void for_each(F&& f) const {
    for (const VoxelKey& k : leaves_) f(k);
  }

 private:
  std::int64_t cell_of(double v) const {
    return static_cast<std::int64_t>(std::floor(v / edge_));
  }
  static VoxelKey parent_of(const VoxelKey& k) {
    return VoxelKey{k.x >> 3, k.y >> 3, k.z >> 3};
  }

  double edge_ = 1.0;
  std::unordered_set<VoxelKey, VoxelKeyHash> leaves_;
  std::unordered_map<VoxelKey, std::uint32_t, VoxelKeyHash> nodes_;
};

inline VoxelSet voxelize(const PointCloud& cloud, double edge) {
  VoxelSet vs(edge);
  for (const Point3& p : cloud.points) vs.insert_point(p);
  return vs;
}

// ---------------------------------------------------------------------------
// Planar grid-bucket index for exact 2D radius queries (z is ignored).
// Strict inequality: returns indices with sqrt(dx^2+dy^2) < radius.
// ---------------------------------------------------------------------------

class PlanarIndex {
 public:
  PlanarIndex() = default;

  PlanarIndex(const PointCloud& cloud, double cell_size) : cloud_(&cloud), cell_(cell_size) {
    if (!(cell_size > 0.0)) throw ConfigError("planar index cell size must be > 0");
    buckets_.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      buckets_[key_of(cloud[i].x, cloud[i].y)].push_back(i);
    }
  }

  std::vector<std::pair<std::size_t, double>> radius_neighbors(const Point3& query,
                                                               double radius) const {
    if (!(radius > 0.0)) throw ConfigError("radius must be > 0");
    std::vector<std::pair<std::size_t, double>> out;
    if (!cloud_ || cloud_->empty()) return out;
    const std::int64_t cx0 = cell_of(query.x - radius), cx1 = cell_of(query.x + radius);
    const std::int64_t cy0 = cell_of(query.y - radius), cy1 = cell_of(query.y + radius);
    const double r2 = radius * radius;
    for (std::int64_t cx = cx0; cx <= cx1; ++cx) {
      for (std::int64_t cy = cy0; cy <= cy1; ++cy) {
        auto it = buckets_.find((static_cast<std::uint64_t>(cx) << 32) ^
                                static_cast<std::uint32_t>(cy));
        if (it == buckets_.end()) continue;
        for (std::size_t i : it->second) {
          const double dx = (*cloud_)[i].x - query.x;
          const double dy = (*cloud_)[i].y - query.y;
          const double d2 = dx * dx + dy * dy;
          if (d2 < r2) out.emplace_back(i, std::sqrt(d2));
        }
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::int64_t cell_of(double v) const {
    return static_cast<std::int64_t>(std::floor(v / cell_));
  }
  std::uint64_t key_of(double x, double y) const {
    return (static_cast<std::uint64_t>(cell_of(x)) << 32) ^
           static_cast<std::uint32_t>(cell_of(y));
  }

  const PointCloud* cloud_ = nullptr;
  double cell_ = 1.0;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

inline std::vector<std::pair<std::size_t, double>> radius_neighbors_2d(const PointCloud& cloud,
                                                                       const Point3& query,
                                                                       double radius) {
  PlanarIndex idx(cloud, std::max(radius, 1e-9));
  return idx.radius_neighbors(query, radius);
}

}  // namespace forestlpr

#endif
