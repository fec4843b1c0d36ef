#ifndef FORESTLPR_MINING_HPP
#define FORESTLPR_MINING_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "forestlpr/error.hpp"
#include "forestlpr/geometry.hpp"
#include "forestlpr/manifest.hpp"

namespace forestlpr {

// Volumetric overlap o = |Vq n Vp| / |Vq u Vp| (IoU of occupied cells).
inline double overlap(const VoxelSet& vq, const VoxelSet& vp) {
  if (vq.empty() && vp.empty()) {
    throw NumericError("overlap: undefined for two empty voxel sets");
  }
  const VoxelSet& small = vq.size() <= vp.size() ? vq : vp;
  const VoxelSet& large = vq.size() <= vp.size() ? vp : vq;
  std::size_t inter = 0;
  small.for_each([&](const VoxelKey& k) {
    if (large.contains(k)) ++inter;
  });
  const std::size_t uni = vq.size() + vp.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// min-denominator variant used by some prior work; saturates to 1 when one
// cloud covers the other, which the IoU form deliberately avoids.
inline double overlap_min_denominator(const VoxelSet& vq, const VoxelSet& vp) {
  if (vq.empty() && vp.empty()) {
    throw NumericError("overlap: undefined for two empty voxel sets");
  }
  const VoxelSet& small = vq.size() <= vp.size() ? vq : vp;
  const VoxelSet& large = vq.size() <= vp.size() ? vp : vq;
  std::size_t inter = 0;
  small.for_each([&](const VoxelKey& k) {
    if (large.contains(k)) ++inter;
  });
  return static_cast<double>(inter) /
         static_cast<double>(std::min(vq.size(), vp.size()));
}

enum class MiningMode { overlap, distance };

struct MiningConfig {
  MiningMode mode = MiningMode::overlap;
  double voxel_edge = 0.5;
  double overlap_positive = 0.9;
  double overlap_negative = 0.5;
  double distance_positive = 12.5;  // meters
  double distance_negative = 50.0;  // meters
  double temporal_exclusion = 100.0;  // same-sequence pairs closer in time are skipped
  double coarse_gate = 60.0;  // pairs farther apart than this get o = 0 without voxelizing

  void validate() const {
    if (!(voxel_edge > 0.0)) throw ConfigError("mining.voxel_edge must be > 0");
    if (!(0.0 <= overlap_negative && overlap_negative < overlap_positive &&
          overlap_positive <= 1.0)) {
      throw ConfigError("mining: require 0 <= overlap_negative < overlap_positive <= 1");
    }
    if (!(0.0 < distance_positive && distance_positive < distance_negative)) {
      throw ConfigError("mining: require 0 < distance_positive < distance_negative");
    }
    if (temporal_exclusion < 0.0) throw ConfigError("mining.temporal_exclusion must be >= 0");
    if (!(coarse_gate > 0.0)) throw ConfigError("mining.coarse_gate must be > 0");
  }
};

struct MinedPair {
  std::string query_id;
  std::string other_id;
  bool positive = false;
  double score = 0.0;  // overlap o or distance in meters
};

struct PairLists {
  std::vector<MinedPair> positives;
  std::vector<MinedPair> negatives;
};

// Loads (or fabricates) the raw cloud for a submap id; lets callers mine from
// memory in tests and from PCD files in the CLI.
using CloudProvider = std::function<PointCloud(const SubmapRecord&)>;

inline PairLists mine_pairs(const Manifest& manifest, const MiningConfig& cfg,
                            const CloudProvider& clouds = nullptr) {
  cfg.validate();
  if (cfg.mode == MiningMode::overlap && !clouds) {
    throw UsageError("mine_pairs: overlap mode requires a cloud provider");
  }

  // Enumeration-order independence: process ids in sorted order.
  std::vector<std::size_t> order(manifest.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&manifest](std::size_t a, std::size_t b) {
    return manifest[a].id < manifest[b].id;
  });

  std::vector<VoxelSet> voxels(manifest.size());
  std::vector<bool> voxelized(manifest.size(), false);
  auto get_voxels = [&](std::size_t i) -> const VoxelSet& {
    if (!voxelized[i]) {
      const PointCloud aligned = transform(clouds(manifest[i]), manifest[i].pose);
      voxels[i] = voxelize(aligned, cfg.voxel_edge);
      voxelized[i] = true;
    }
    return voxels[i];
  };

  PairLists out;
  for (std::size_t a = 0; a < order.size(); ++a) {
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const SubmapRecord& q = manifest[order[a]];
      const SubmapRecord& p = manifest[order[b]];
      if (q.sequence == p.sequence &&
          std::abs(q.timestamp - p.timestamp) < cfg.temporal_exclusion) {
        continue;
      }
      const double dx = q.pose.tx - p.pose.tx;
      const double dy = q.pose.ty - p.pose.ty;
      const double dz = q.pose.tz - p.pose.tz;
      const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);

      if (cfg.mode == MiningMode::distance) {
        if (dist < cfg.distance_positive) {
          out.positives.push_back(MinedPair{q.id, p.id, true, dist});
        } else if (dist > cfg.distance_negative) {
          out.negatives.push_back(MinedPair{q.id, p.id, false, dist});
        }
        continue;
      }

      double o = 0.0;
      if (std::sqrt(dx * dx + dy * dy) <= cfg.coarse_gate) {
        o = overlap(get_voxels(order[a]), get_voxels(order[b]));
      }
      if (o > cfg.overlap_positive) {
        out.positives.push_back(MinedPair{q.id, p.id, true, o});
      } else if (o < cfg.overlap_negative) {
        out.negatives.push_back(MinedPair{q.id, p.id, false, o});
      }
    }
  }
  return out;
}

inline void save_pairs_csv(const std::string& path, const PairLists& pairs) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "query_id,other_id,label,score\n";
  out.precision(10);
  for (const MinedPair& p : pairs.positives) {
    out << p.query_id << "," << p.other_id << ",pos," << p.score << "\n";
  }
  for (const MinedPair& p : pairs.negatives) {
    out << p.query_id << "," << p.other_id << ",neg," << p.score << "\n";
  }
}

inline PairLists load_pairs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  PairLists out;
  std::string line;
  std::getline(in, line);  // header
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (cols.size() != 4 || (cols[2] != "pos" && cols[2] != "neg")) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed pair row");
    }
    MinedPair p{cols[0], cols[1], cols[2] == "pos", std::stod(cols[3])};
    (p.positive ? out.positives : out.negatives).push_back(std::move(p));
  }
  return out;
}

}  // namespace forestlpr

#endif
