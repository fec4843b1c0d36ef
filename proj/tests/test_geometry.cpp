#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "forestlpr/geometry.hpp"
#include "forestlpr/rng.hpp"

using namespace forestlpr;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n, double span) {
  PointCloud c;
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back(Point3{rng.uniform(-span, span), rng.uniform(-span, span),
                              rng.uniform(-span, span)});
  }
  return c;
}

}  // namespace

TEST_CASE("rotate_z basic cases", "[geometry]") {
  PointCloud c;
  c.points.push_back(Point3{1, 0, 0});

  SECTION("quarter turn") {
    const PointCloud r = rotate_z(c, M_PI / 2);
    CHECK(r[0].x == Catch::Approx(0).margin(1e-12));
    CHECK(r[0].y == Catch::Approx(1).margin(1e-12));
    CHECK(r[0].z == 0.0);
  }
  SECTION("zero angle is the identity") {
    const PointCloud r = rotate_z(c, 0.0);
    CHECK(r[0].x == 1.0);
    CHECK(r[0].y == 0.0);
  }
  SECTION("non-finite angle rejected") {
    CHECK_THROWS_AS(rotate_z(c, std::nan("")), ConfigError);
  }
}

TEST_CASE("rotate_z properties", "[geometry]") {
  Rng rng(7);
  const PointCloud c = random_cloud(rng, 200, 20.0);
  const double angle = rng.uniform(-M_PI, M_PI);
  const PointCloud fwd = rotate_z(c, angle);
  const PointCloud back = rotate_z(fwd, -angle);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(back[i].x == Catch::Approx(c[i].x).margin(1e-12));
    CHECK(back[i].y == Catch::Approx(c[i].y).margin(1e-12));
    CHECK(fwd[i].z == c[i].z);
    const double n0 = std::hypot(c[i].x, c[i].y);
    const double n1 = std::hypot(fwd[i].x, fwd[i].y);
    CHECK(n1 == Catch::Approx(n0).margin(1e-12));
  }
}

TEST_CASE("transform basic cases", "[geometry]") {
  PointCloud c;
  c.points.push_back(Point3{0, 0, 0});
  c.points.push_back(Point3{1, 2, 3});

  SECTION("identity pose") {
    const PointCloud r = transform(c, Pose::identity());
    CHECK(r[1].x == 1.0);
    CHECK(r[1].y == 2.0);
    CHECK(r[1].z == 3.0);
  }
  SECTION("pure translation") {
    Pose p;
    p.tx = 1.0;
    const PointCloud r = transform(c, p);
    CHECK(r[0].x == 1.0);
    CHECK(r[0].y == 0.0);
  }
}

TEST_CASE("transform composed with its inverse is the identity", "[geometry]") {
  Rng rng(11);
  Pose p;
  p.tx = rng.uniform(-10, 10);
  p.ty = rng.uniform(-10, 10);
  p.tz = rng.uniform(-10, 10);
  p.qw = rng.gaussian();
  p.qx = rng.gaussian();
  p.qy = rng.gaussian();
  p.qz = rng.gaussian();
  p.normalize_quat();
  const PointCloud c = random_cloud(rng, 100, 15.0);
  const PointCloud round = transform(transform(c, p), p.inverse());
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(round[i].x == Catch::Approx(c[i].x).margin(1e-9));
    CHECK(round[i].y == Catch::Approx(c[i].y).margin(1e-9));
    CHECK(round[i].z == Catch::Approx(c[i].z).margin(1e-9));
  }
}

TEST_CASE("pose quaternion validation", "[geometry]") {
  Pose p;
  p.qw = p.qx = p.qy = p.qz = 0.0;
  CHECK_THROWS_AS(p.normalize_quat(), NumericError);
}

TEST_CASE("voxelize floor arithmetic", "[geometry]") {
  PointCloud c;
  c.points.push_back(Point3{0.1, 0.1, 0.1});
  c.points.push_back(Point3{0.2, 0.2, 0.2});
  CHECK(voxelize(c, 0.5).size() == 1);

  PointCloud d;
  d.points.push_back(Point3{0.49, 0, 0});
  d.points.push_back(Point3{0.51, 0, 0});
  CHECK(voxelize(d, 0.5).size() == 2);

  CHECK(voxelize(PointCloud{}, 0.5).empty());
  CHECK_THROWS_AS(voxelize(c, 0.0), ConfigError);
}

TEST_CASE("voxelize is order independent and duplicate idempotent", "[geometry]") {
  Rng rng(3);
  PointCloud c = random_cloud(rng, 500, 5.0);
  PointCloud doubled = c;
  doubled.points.insert(doubled.points.end(), c.points.begin(), c.points.end());
  PointCloud reversed = c;
  std::reverse(reversed.points.begin(), reversed.points.end());

  const VoxelSet a = voxelize(c, 0.5);
  const VoxelSet b = voxelize(reversed, 0.5);
  const VoxelSet d = voxelize(doubled, 0.5);
  CHECK(a.size() == b.size());
  CHECK(a.size() == d.size());
  a.for_each([&](const VoxelKey& k) {
    CHECK(b.contains(k));
    CHECK(d.contains(k));
  });
}

TEST_CASE("radius_neighbors_2d ignores z and respects the strict boundary", "[geometry]") {
  PointCloud c;
  c.points.push_back(Point3{0, 0, 0});
  c.points.push_back(Point3{2, 0, 9});
  const Point3 q{0, 0, 5};

  auto r1 = radius_neighbors_2d(c, q, 1.0);
  REQUIRE(r1.size() == 1);
  CHECK(r1[0].first == 0);
  CHECK(r1[0].second == 0.0);

  auto r3 = radius_neighbors_2d(c, q, 3.0);
  REQUIRE(r3.size() == 2);
  CHECK(r3[0].second == 0.0);
  CHECK(r3[1].second == 2.0);

  // Point at exactly the radius is excluded.
  auto r2 = radius_neighbors_2d(c, q, 2.0);
  CHECK(r2.size() == 1);
}

TEST_CASE("planar index matches a brute-force scan", "[geometry]") {
  Rng rng(17);
  for (const std::size_t n : {0ul, 1ul, 37ul, 1000ul, 10000ul}) {
    const PointCloud c = random_cloud(rng, n, 50.0);
    PlanarIndex index(c, 4.0);
    for (int trial = 0; trial < 8; ++trial) {
      const Point3 q{rng.uniform(-55, 55), rng.uniform(-55, 55), rng.uniform(-5, 5)};
      const double radius = rng.uniform(0.5, 20.0);
      const auto got = index.radius_neighbors(q, radius);

      std::vector<std::pair<std::size_t, double>> expected;
      for (std::size_t i = 0; i < c.size(); ++i) {
        const double dx = c[i].x - q.x, dy = c[i].y - q.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < radius * radius) expected.emplace_back(i, std::sqrt(d2));
      }
      std::sort(expected.begin(), expected.end());
      REQUIRE(got.size() == expected.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].first == expected[i].first);
        CHECK(got[i].second == expected[i].second);
      }
    }
  }
}
