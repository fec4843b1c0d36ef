#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <tuple>

#include "forestlpr/mining.hpp"
#include "forestlpr/synth.hpp"

using namespace forestlpr;

namespace {

SynthParams small_params() {
  SynthParams p;
  p.scene_x = p.scene_y = 60.0;
  p.tree_density = 0.01;
  p.understory_density = 0.01;
  p.ground_spacing = 1.0;
  p.submap_radius = 15.0;
  p.submap_spacing = 10.0;
  return p;
}

std::vector<TrajectoryPose> revisit_trajectory() {
  // The same viewpoint visited once per pass.
  TrajectoryPose a;
  a.x = 5.0;
  a.y = -3.0;
  a.yaw = 0.7;
  a.pass = 0;
  a.timestamp = 0.0;
  TrajectoryPose b = a;
  b.pass = 1;
  b.timestamp = 500.0;
  return {a, b};
}

using Key = std::tuple<double, double, double>;

std::set<Key> point_set(const PointCloud& c) {
  std::set<Key> s;
  for (const Point3& p : c.points) s.insert({p.x, p.y, p.z});
  return s;
}

double height_above_terrain(const ForestScene& scene, const Pose& pose, const Point3& local) {
  const Point3 w = pose.apply(local);
  return w.z - scene.terrain_height(w.x, w.y);
}

}  // namespace

TEST_CASE("scene generation is seed-deterministic", "[synth]") {
  const SynthParams p = small_params();
  const ForestScene a = generate_scene(7, p);
  const ForestScene b = generate_scene(7, p);
  REQUIRE(a.trees.size() == b.trees.size());
  CHECK(a.trees.size() > 10);
  for (std::size_t i = 0; i < a.trees.size(); ++i) {
    CHECK(a.trees[i].x == b.trees[i].x);
    CHECK(a.trees[i].y == b.trees[i].y);
    CHECK(a.trees[i].trunk_radius == b.trees[i].trunk_radius);
    CHECK(a.trees[i].height == b.trees[i].height);
  }
  CHECK(a.terrain_height(10.0, -20.0) == b.terrain_height(10.0, -20.0));

  const ForestScene c = generate_scene(8, p);
  bool differs = c.trees.size() != a.trees.size();
  if (!differs && !a.trees.empty()) differs = a.trees[0].x != c.trees[0].x;
  CHECK(differs);

  SECTION("trees keep a minimum separation") {
    for (std::size_t i = 0; i < a.trees.size(); ++i) {
      for (std::size_t j = i + 1; j < a.trees.size(); ++j) {
        const double dx = a.trees[i].x - a.trees[j].x;
        const double dy = a.trees[i].y - a.trees[j].y;
        const double sep = a.trees[i].trunk_radius + a.trees[j].trunk_radius + 0.2;
        CHECK(dx * dx + dy * dy >= sep * sep);
      }
    }
  }
  SECTION("tree heights and radii stay in range") {
    for (const SynthTree& t : a.trees) {
      CHECK(t.trunk_radius >= 0.1);
      CHECK(t.trunk_radius <= 0.4);
      CHECK(t.height >= 8.0);
      CHECK(t.height <= 20.0);
    }
  }
}

TEST_CASE("zero densities yield bare terrain", "[synth]") {
  SynthParams p = small_params();
  p.tree_density = 0.0;
  p.understory_density = 0.0;
  const ForestScene scene = generate_scene(1, p);
  CHECK(scene.trees.empty());
  const detail::WorldPoints w = detail::build_world_points(scene, 0);
  CHECK(w.cloud.size() > 1000);
  for (std::size_t i = 0; i < w.cloud.size(); ++i) {
    const Point3& pt = w.cloud[i];
    CHECK(pt.z == scene.terrain_height(pt.x, pt.y));
    CHECK_FALSE(w.is_canopy[i]);
  }

  SECTION("flat terrain when the amplitude is zero") {
    p.terrain_amplitude = 0.0;
    const ForestScene flat = generate_scene(1, p);
    CHECK(flat.terrain_height(13.0, -27.0) == 0.0);
  }
  SECTION("terrain amplitude bounds the heightfield") {
    for (double x = -30; x <= 30; x += 3) {
      for (double y = -30; y <= 30; y += 3) {
        CHECK(std::abs(scene.terrain_height(x, y)) <= p.terrain_amplitude + 1e-12);
      }
    }
  }
}

TEST_CASE("tree counts follow the Poisson intensity", "[synth]") {
  SynthParams p = small_params();
  p.scene_x = p.scene_y = 40.0;
  p.tree_density = 0.05;  // lambda = 80
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    sum += static_cast<double>(generate_scene(seed, p).trees.size());
  }
  const double mean = sum / 100.0;
  // Standard error sqrt(80)/10 ~ 0.9; allow a little rejection shortfall.
  CHECK(mean == Catch::Approx(80.0).margin(3.0));

  Rng rng(4);
  double draw_sum = 0.0;
  for (int i = 0; i < 200; ++i) {
    draw_sum += static_cast<double>(detail::poisson_draw(rng, 80.0));
  }
  CHECK(draw_sum / 200.0 == Catch::Approx(80.0).margin(2.0));
  CHECK(detail::poisson_draw(rng, 0.0) == 0);
}

TEST_CASE("noise-free revisit of the same pose reproduces the cloud exactly", "[synth]") {
  SynthParams p = small_params();
  p.resample_sigma = 0.0;
  const ForestScene scene = generate_scene(11, p);
  const auto submaps = sample_submaps(scene, revisit_trajectory());
  REQUIRE(submaps.size() == 2);
  REQUIRE(submaps[0].cloud.size() > 500);
  REQUIRE(submaps[0].cloud.size() == submaps[1].cloud.size());
  for (std::size_t i = 0; i < submaps[0].cloud.size(); ++i) {
    CHECK(submaps[0].cloud[i].x == submaps[1].cloud[i].x);
    CHECK(submaps[0].cloud[i].y == submaps[1].cloud[i].y);
    CHECK(submaps[0].cloud[i].z == submaps[1].cloud[i].z);
  }
  CHECK(submaps[0].id == p.sequence + "_0000");
  CHECK(submaps[1].id == p.sequence + "_0001");
  CHECK(submaps[1].pose.timestamp == 500.0);
}

TEST_CASE("seasonal mode only reshuffles canopy points", "[synth]") {
  SynthParams p = small_params();
  p.resample_sigma = 0.0;
  p.seasonal = true;
  const ForestScene scene = generate_scene(12, p);
  const auto submaps = sample_submaps(scene, revisit_trajectory());
  REQUIRE(submaps.size() == 2);

  const std::set<Key> s0 = point_set(submaps[0].cloud);
  const std::set<Key> s1 = point_set(submaps[1].cloud);
  std::size_t shared = 0, changed = 0;
  for (const auto& c : {std::make_pair(&submaps[0], &s1), std::make_pair(&submaps[1], &s0)}) {
    for (const Point3& pt : c.first->cloud.points) {
      if (c.second->count({pt.x, pt.y, pt.z})) {
        ++shared;
      } else {
        ++changed;
        // Every changed point sits at canopy height above the local terrain.
        CHECK(height_above_terrain(scene, c.first->pose.pose, pt) > 4.0);
      }
    }
  }
  CHECK(shared > 0);
  CHECK(changed > 0);

  SECTION("pass zero is unaffected by the seasonal flag") {
    SynthParams q = p;
    q.seasonal = false;
    const auto plain = sample_submaps(generate_scene(12, q), revisit_trajectory());
    REQUIRE(plain[0].cloud.size() == submaps[0].cloud.size());
    for (std::size_t i = 0; i < plain[0].cloud.size(); ++i) {
      CHECK(plain[0].cloud[i].z == submaps[0].cloud[i].z);
    }
  }
}

TEST_CASE("blind sector is a pure azimuth filter", "[synth]") {
  SynthParams p = small_params();
  const ForestScene scene = generate_scene(13, p);
  const auto full = sample_submaps(scene, revisit_trajectory());

  SynthParams q = p;
  q.blind_sector_deg = 90.0;
  ForestScene wedge_scene = scene;
  wedge_scene.params = q;
  const auto cut = sample_submaps(wedge_scene, revisit_trajectory());

  for (std::size_t s = 0; s < full.size(); ++s) {
    PointCloud expected;
    const double half = 45.0 * M_PI / 180.0;
    for (const Point3& pt : full[s].cloud.points) {
      const double az = std::atan2(pt.y, pt.x);
      if (std::abs(std::remainder(az - M_PI, 2 * M_PI)) < half) continue;
      expected.points.push_back(pt);
    }
    REQUIRE(cut[s].cloud.size() == expected.size());
    CHECK(cut[s].cloud.size() < full[s].cloud.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(cut[s].cloud[i].x == expected[i].x);
      CHECK(cut[s].cloud[i].z == expected[i].z);
    }
  }
}

TEST_CASE("loop trajectory structure", "[synth]") {
  SynthParams p = small_params();
  p.passes = 2;
  p.reverse_fraction = 0.5;
  const ForestScene scene = generate_scene(14, p);
  const auto traj = make_loop_trajectory(scene);
  REQUIRE(traj.size() >= 8);
  REQUIRE(traj.size() % 2 == 0);
  const std::size_t per_pass = traj.size() / 2;

  std::size_t reversed = 0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(traj[i].pass == (i < per_pass ? 0 : 1));
    if (i > 0) CHECK(traj[i].timestamp == traj[i - 1].timestamp + 10.0);
    if (traj[i].pass == 0) CHECK_FALSE(traj[i].reversed);
    if (traj[i].reversed) ++reversed;
  }
  CHECK(reversed == per_pass / 2);
  // Reversed segment is the trailing block of pass two.
  for (std::size_t i = traj.size() - reversed; i < traj.size(); ++i) {
    CHECK(traj[i].reversed);
  }

  // Revisit poses sit near the first-pass loop (lateral offset under a meter).
  for (std::size_t i = 0; i < per_pass; ++i) {
    const double dx = traj[per_pass + i].x - traj[i].x;
    const double dy = traj[per_pass + i].y - traj[i].y;
    CHECK(std::hypot(dx, dy) <= p.pass_offset + 1e-9);
  }
}

TEST_CASE("submap sampling is reproducible end to end", "[synth]") {
  const SynthParams p = small_params();
  const ForestScene scene = generate_scene(15, p);
  const auto traj = make_loop_trajectory(scene);
  const auto a = sample_submaps(scene, traj);
  const auto b = sample_submaps(scene, traj);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == traj.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].pose.pose.tx == b[i].pose.pose.tx);
    REQUIRE(a[i].cloud.size() == b[i].cloud.size());
    for (std::size_t j = 0; j < a[i].cloud.size(); ++j) {
      CHECK(a[i].cloud[j].x == b[i].cloud[j].x);
      CHECK(a[i].cloud[j].z == b[i].cloud[j].z);
    }
  }
}

TEST_CASE("distance mining recovers the revisit structure of the loop", "[synth]") {
  const SynthParams p = small_params();
  const ForestScene scene = generate_scene(16, p);
  const auto traj = make_loop_trajectory(scene);
  const auto submaps = sample_submaps(scene, traj);

  Manifest manifest(submaps.size());
  for (std::size_t i = 0; i < submaps.size(); ++i) {
    manifest[i] = SubmapRecord{submaps[i].id, p.sequence, submaps[i].pose.timestamp, "",
                               submaps[i].pose.pose};
  }
  MiningConfig cfg;
  cfg.mode = MiningMode::distance;
  cfg.distance_positive = 3.0;
  cfg.distance_negative = 30.0;
  cfg.temporal_exclusion = 100.0;
  const PairLists pairs = mine_pairs(manifest, cfg);

  std::set<std::pair<std::string, std::string>> pos;
  for (const MinedPair& mp : pairs.positives) {
    pos.insert({mp.query_id, mp.other_id});
    pos.insert({mp.other_id, mp.query_id});
  }
  const std::size_t per_pass = traj.size() / 2;
  std::size_t expected_revisits = 0;
  for (std::size_t i = 0; i < per_pass; ++i) {
    const std::size_t j = per_pass + i;
    const double dx = manifest[i].pose.tx - manifest[j].pose.tx;
    const double dy = manifest[i].pose.ty - manifest[j].pose.ty;
    const double dz = manifest[i].pose.tz - manifest[j].pose.tz;
    if (std::sqrt(dx * dx + dy * dy + dz * dz) >= 3.0) continue;
    if (std::abs(manifest[i].timestamp - manifest[j].timestamp) < 100.0) continue;
    ++expected_revisits;
    CHECK(pos.count({manifest[i].id, manifest[j].id}) == 1);
  }
  CHECK(expected_revisits > per_pass / 2);  // most revisits are minable

  // Adjacent poses in the same pass are 10 s apart: temporally excluded even
  // though they are well within 3 m + spacing.
  CHECK(pos.count({manifest[0].id, manifest[1].id}) == 0);
  CHECK_FALSE(pairs.negatives.empty());
  for (const MinedPair& mp : pairs.negatives) CHECK(mp.score > 30.0);
}
