#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "forestlpr/mining.hpp"
#include "forestlpr/rng.hpp"

using namespace forestlpr;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, double span) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back(Point3{rng.uniform(-span, span), rng.uniform(-span, span),
                              rng.uniform(0, 10)});
  }
  return c;
}

VoxelSet grid_voxels(std::initializer_list<std::array<int, 3>> cells) {
  PointCloud c;
  for (const auto& v : cells) {
    c.points.push_back(Point3{v[0] + 0.5, v[1] + 0.5, v[2] + 0.5});
  }
  return voxelize(c, 1.0);
}

}  // namespace

TEST_CASE("overlap boundary cases", "[mining]") {
  const VoxelSet a = grid_voxels({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  const VoxelSet same = grid_voxels({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  const VoxelSet disjoint = grid_voxels({{9, 9, 9}});
  CHECK(overlap(a, same) == 1.0);
  CHECK(overlap(a, disjoint) == 0.0);
  CHECK(overlap(a, disjoint) == overlap(disjoint, a));
  CHECK_THROWS_AS(overlap(VoxelSet{}, VoxelSet{}), NumericError);

  // {a,b,c} vs {b,c,d}: 2 shared of 4 total.
  const VoxelSet abc = grid_voxels({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  const VoxelSet bcd = grid_voxels({{1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  CHECK(overlap(abc, bcd) == 0.5);
  CHECK(overlap(bcd, abc) == 0.5);
}

TEST_CASE("min-denominator overlap saturates on subsets", "[mining]") {
  const VoxelSet sub = grid_voxels({{0, 0, 0}, {1, 0, 0}});
  const VoxelSet super = grid_voxels({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  CHECK(overlap_min_denominator(sub, super) == 1.0);
  CHECK(overlap(sub, super) == 0.5);
  CHECK(overlap_min_denominator(super, sub) == 1.0);
}

TEST_CASE("overlap matches a brute-force IoU on random sets", "[mining]") {
  Rng rng(71);
  for (int trial = 0; trial < 15; ++trial) {
    const PointCloud ca = random_cloud(rng, 400, 8.0);
    const PointCloud cb = random_cloud(rng, 400, 8.0);
    const VoxelSet va = voxelize(ca, 1.0), vb = voxelize(cb, 1.0);

    std::set<std::array<std::int64_t, 3>> sa, sb;
    va.for_each([&sa](const VoxelKey& k) { sa.insert({k.x, k.y, k.z}); });
    vb.for_each([&sb](const VoxelKey& k) { sb.insert({k.x, k.y, k.z}); });
    std::size_t inter = 0;
    for (const auto& k : sa) inter += sb.count(k);
    const double want =
        static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
    CHECK(overlap(va, vb) == want);
    const double want_min = static_cast<double>(inter) /
                            static_cast<double>(std::min(sa.size(), sb.size()));
    CHECK(overlap_min_denominator(va, vb) == want_min);
  }
}

TEST_CASE("overlap is monotone as clouds drift apart", "[mining]") {
  // A solid block: shifting it strictly shrinks the voxel intersection.
  PointCloud base;
  for (int x = 0; x < 20; ++x)
    for (int y = 0; y < 20; ++y)
      for (int z = 0; z < 20; ++z)
        base.points.push_back(Point3{x * 0.5 + 0.25, y * 0.5 + 0.25, z * 0.5 + 0.25});
  const VoxelSet vb = voxelize(base, 0.5);
  double prev = 1.0;
  for (double shift : {0.0, 2.0, 6.0, 14.0, 40.0}) {
    PointCloud moved = base;
    for (Point3& p : moved.points) p.x += shift;
    const double o = overlap(vb, voxelize(moved, 0.5));
    CHECK(o <= prev + 1e-12);
    prev = o;
  }
  CHECK(prev == 0.0);  // fully separated at 40 m
}

TEST_CASE("mine_pairs overlap mode on pose-aligned copies", "[mining]") {
  Rng rng(73);
  const PointCloud shared = random_cloud(rng, 3000, 20.0);

  // Submap b sees the same world from a shifted, rotated pose: its local cloud
  // is the world cloud expressed in that frame, so pose alignment recovers a
  // perfect overlap.
  Pose pb;
  pb.tx = 5.0;
  pb.ty = -3.0;
  pb.qz = std::sin(0.4);
  pb.qw = std::cos(0.4);
  const PointCloud local_b = transform(shared, pb.inverse());

  // Submap c is a disjoint area 100 m away.
  Pose pc;
  pc.tx = 100.0;
  PointCloud local_c = random_cloud(rng, 3000, 20.0);

  Manifest m(3);
  m[0] = SubmapRecord{"a", "s", 0.0, "", Pose::identity()};
  m[1] = SubmapRecord{"b", "s", 500.0, "", pb};
  m[2] = SubmapRecord{"c", "s", 1000.0, "", pc};
  CloudProvider provider = [&](const SubmapRecord& r) {
    if (r.id == "a") return shared;
    if (r.id == "b") return local_b;
    return local_c;
  };

  MiningConfig cfg;  // overlap mode, 0.9 / 0.5 thresholds
  const PairLists pairs = mine_pairs(m, cfg, provider);
  REQUIRE(pairs.positives.size() == 1);
  CHECK(pairs.positives[0].query_id == "a");
  CHECK(pairs.positives[0].other_id == "b");
  CHECK(pairs.positives[0].score > 0.9);
  // (a,c) and (b,c) are far beyond the coarse gate: negatives with o = 0.
  REQUIRE(pairs.negatives.size() == 2);
  for (const MinedPair& p : pairs.negatives) {
    CHECK(p.other_id == "c");
    CHECK(p.score == 0.0);
  }

  SECTION("manifest order does not change the result") {
    Manifest shuffled(3);
    shuffled[0] = m[2];
    shuffled[1] = m[0];
    shuffled[2] = m[1];
    const PairLists again = mine_pairs(shuffled, cfg, provider);
    REQUIRE(again.positives.size() == 1);
    CHECK(again.positives[0].query_id == "a");
    CHECK(again.positives[0].other_id == "b");
    REQUIRE(again.negatives.size() == 2);
    CHECK(again.negatives[0].query_id == pairs.negatives[0].query_id);
    CHECK(again.negatives[1].query_id == pairs.negatives[1].query_id);
  }
  SECTION("overlap mode needs a cloud provider") {
    CHECK_THROWS_AS(mine_pairs(m, cfg, nullptr), UsageError);
  }
}

TEST_CASE("mine_pairs distance mode and temporal exclusion", "[mining]") {
  Manifest m(4);
  m[0] = SubmapRecord{"q0", "s", 0.0, "", Pose{0, 0, 0, 0, 0, 0, 1}};
  m[1] = SubmapRecord{"q1", "s", 1000.0, "", Pose{5, 0, 0, 0, 0, 0, 1}};   // 5 m: positive
  m[2] = SubmapRecord{"q2", "s", 2000.0, "", Pose{100, 0, 0, 0, 0, 0, 1}}; // far: negative
  m[3] = SubmapRecord{"q3", "s", 1050.0, "", Pose{6, 0, 0, 0, 0, 0, 1}};   // near q1 in time

  MiningConfig cfg;
  cfg.mode = MiningMode::distance;  // 12.5 / 50 m
  const PairLists pairs = mine_pairs(m, cfg);

  auto has = [](const std::vector<MinedPair>& v, const std::string& a, const std::string& b) {
    for (const MinedPair& p : v) {
      if (p.query_id == a && p.other_id == b) return true;
    }
    return false;
  };
  CHECK(has(pairs.positives, "q0", "q1"));
  CHECK(has(pairs.positives, "q0", "q3"));
  CHECK(has(pairs.negatives, "q0", "q2"));
  CHECK(has(pairs.negatives, "q1", "q2"));
  // q1 and q3 are 50 s apart in the same sequence: excluded entirely.
  CHECK_FALSE(has(pairs.positives, "q1", "q3"));
  CHECK_FALSE(has(pairs.negatives, "q1", "q3"));
  // 3D distance: no pair in the dead band (12.5, 50).
  for (const MinedPair& p : pairs.positives) CHECK(p.score < 12.5);
  for (const MinedPair& p : pairs.negatives) CHECK(p.score > 50.0);

  SECTION("different sequences are never temporally excluded") {
    Manifest two(2);
    two[0] = SubmapRecord{"a", "s1", 0.0, "", Pose{0, 0, 0, 0, 0, 0, 1}};
    two[1] = SubmapRecord{"b", "s2", 10.0, "", Pose{1, 0, 0, 0, 0, 0, 1}};
    const PairLists cross = mine_pairs(two, cfg);
    CHECK(cross.positives.size() == 1);
  }
  SECTION("positives and negatives are disjoint") {
    std::set<std::pair<std::string, std::string>> pos;
    for (const MinedPair& p : pairs.positives) pos.emplace(p.query_id, p.other_id);
    for (const MinedPair& p : pairs.negatives) CHECK(pos.count({p.query_id, p.other_id}) == 0);
  }
}

TEST_CASE("pair CSV round trip", "[mining]") {
  PairLists pairs;
  pairs.positives.push_back(MinedPair{"a", "b", true, 0.953125});
  pairs.negatives.push_back(MinedPair{"a", "c", false, 0.0});
  pairs.negatives.push_back(MinedPair{"b", "c", false, 0.25});

  const std::string path =
      (std::filesystem::temp_directory_path() / "forestlpr-pairs.csv").string();
  save_pairs_csv(path, pairs);
  const PairLists got = load_pairs_csv(path);
  REQUIRE(got.positives.size() == 1);
  REQUIRE(got.negatives.size() == 2);
  CHECK(got.positives[0].query_id == "a");
  CHECK(got.positives[0].other_id == "b");
  CHECK(got.positives[0].score == 0.953125);
  CHECK(got.negatives[1].other_id == "c");
  CHECK(got.negatives[1].score == 0.25);

  std::ofstream bad(path);
  bad << "query_id,other_id,label,score\nx,y,maybe,0.5\n";
  bad.close();
  CHECK_THROWS_AS(load_pairs_csv(path), ParseError);
  std::filesystem::remove(path);
}
