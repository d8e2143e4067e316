#include <doctest.h>

#include <cmath>

#include "wayfinder/relations.hpp"

using namespace wayfinder;
using namespace wayfinder::rel;
using geo::Pose2;
using geo::Vec2;

namespace {

const RelationModels& models() { return RelationModels::bundled(); }

RegionGeom hallway() { return RegionGeom::from_polygon(geo::Rect{10, 4, 34, 7}.polygon()); }

geo::Polygon moved(const geo::Polygon& poly, const Pose2& t) { return geo::transform(t, poly); }

Pose2 moved(const Pose2& p, const Pose2& t) { return geo::compose(t, p); }

geo::Polygon mirrored(const geo::Polygon& poly) {
  geo::Polygon out;
  for (const auto& v : poly) out.emplace_back(v.x(), -v.y());
  return out;
}

}  // namespace

TEST_CASE("bundled relation models cover the inventory") {
  CHECK(models().models.size() == 12);
  for (const char* n : {"down", "near", "past", "through", "before", "left", "right", "at-end-of"}) {
    CHECK(models().index(n) >= 0);
  }
  CHECK(models().dp.alpha == 1.0);
  CHECK(models().dp.base == 0.01);
}

TEST_CASE("near decreases with distance") {
  const int near = models().index("near");
  const auto lm = RegionGeom::circle({0, 0}, 2.0);
  const Pose2 robot{-8, 0, 0};
  double prev = 1.0;
  for (double d : {1.0, 2.0, 5.0, 10.0, 20.0}) {
    const double s = models().score(near, RegionGeom::circle({0, d}, 2.0), lm, robot);
    CHECK(std::isfinite(s));
    CHECK(s < prev);
    prev = s;
  }
}

TEST_CASE("down favors the hallway axis beyond the robot") {
  const int down = models().index("down");
  const Pose2 robot{5, 5.5, 0};
  const auto on_axis = RegionGeom::circle({30, 5.5}, 2.5);
  // same distance from the landmark center, perpendicular to the axis
  const double dist = (Vec2(30, 5.5) - hallway().center).norm();
  const auto perpendicular = RegionGeom::circle(hallway().center + Vec2(0, dist), 2.5);
  const double a = models().score(down, on_axis, hallway(), robot);
  const double b = models().score(down, perpendicular, hallway(), robot);
  CHECK(a > b);
  // regression fixture for the bundled weights
  CHECK(a == doctest::Approx(-0.0925536275157).epsilon(1e-9));
  CHECK(b == doctest::Approx(-2.3050833197687).epsilon(1e-9));
}

TEST_CASE("mirrored configurations swap left and right exactly") {
  const int left = models().index("left"), right = models().index("right");
  const auto lm = RegionGeom::from_polygon(geo::Rect{4, -1, 8, 3}.polygon());
  const auto fig = RegionGeom::from_polygon(geo::Rect{5, 4, 9, 7}.polygon());
  const Pose2 robot{0, 0.5, 0.2};
  const auto lm_m = RegionGeom::from_polygon(mirrored(lm.polygon));
  const auto fig_m = RegionGeom::from_polygon(mirrored(fig.polygon));
  const Pose2 robot_m{robot.x, -robot.y, -robot.theta};
  CHECK(models().score(left, fig, lm, robot) == models().score(right, fig_m, lm_m, robot_m));
  CHECK(models().score(right, fig, lm, robot) == models().score(left, fig_m, lm_m, robot_m));
  CHECK(models().score(left, fig, lm, robot) > models().score(right, fig, lm, robot));
}

TEST_CASE("scores are invariant under rigid transforms") {
  const auto lm_poly = geo::Rect{10, 4, 34, 7}.polygon();
  const auto fig_poly = geo::Rect{34, 1, 39, 10}.polygon();
  const Pose2 robot{5, 5, 0.3};
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose2 t{20 * uniform01(rng) - 10, 20 * uniform01(rng) - 10, 6 * uniform01(rng) - 3};
    for (int r = 0; r < static_cast<int>(models().models.size()); ++r) {
      const double a = models().score(r, RegionGeom::from_polygon(fig_poly), RegionGeom::from_polygon(lm_poly), robot);
      const double b = models().score(r, RegionGeom::from_polygon(moved(fig_poly, t)),
                                      RegionGeom::from_polygon(moved(lm_poly, t)), moved(robot, t));
      CHECK(a == doctest::Approx(b).epsilon(1e-9));
    }
  }
}

TEST_CASE("degenerate geometry is rejected") {
  const int near = models().index("near");
  const auto ok = RegionGeom::circle({0, 0}, 1.0);
  const RegionGeom bad;
  CHECK_THROWS_AS(models().score(near, ok, bad, {}), DegenerateGeometryError);
  CHECK_THROWS_AS(models().score(near, bad, ok, {}), DegenerateGeometryError);
  Rng rng(1);
  CHECK_THROWS_AS(models().sample_constraint(near, bad, {}, rng), DegenerateGeometryError);
}

TEST_CASE("down samples lie beyond half the hallway") {
  const int down = models().index("down");
  const Pose2 robot{5, 5.5, 0};
  const auto g = models().density(down, hallway(), robot);
  // robot projects onto the near end (x = 10); hallway length 24
  CHECK(g.mean.x() - 10.0 > 12.0);
  CHECK(g.mean.y() == doctest::Approx(5.5));
}

TEST_CASE("sample mean matches the declared density") {
  Rng rng(17);
  const int n = 10000;
  for (const char* name : {"down", "near", "past", "left"}) {
    const int r = models().index(name);
    const Pose2 robot{5, 5.5, 0.4};
    Vec2 sum = Vec2::Zero();
    geo::Gaussian2 g;
    for (int i = 0; i < n; ++i) {
      const auto s = models().sample_constraint(r, hallway(), robot, rng);
      g = s.density;
      sum += s.sample;
    }
    const Vec2 mean = sum / n;
    CHECK(std::abs(mean.x() - g.mean.x()) < 3.0 * std::sqrt(g.cov(0, 0) / n));
    CHECK(std::abs(mean.y() - g.mean.y()) < 3.0 * std::sqrt(g.cov(1, 1) / n));
  }
  Rng a(5), b(5);
  const int down = models().index("down");
  CHECK(models().sample_constraint(down, hallway(), {}, a).sample ==
        models().sample_constraint(down, hallway(), {}, b).sample);
}

TEST_CASE("dp grounding probabilities") {
  const DPConfig dp{1.0, 0.05};
  const auto p = dp_probabilities({0.3, 0.1}, dp);
  REQUIRE(p.size() == 3);
  CHECK(p[0] == doctest::Approx(0.3 / 0.45).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.1 / 0.45).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(0.05 / 0.45).epsilon(1e-12));
  CHECK(dp_probabilities({}, dp) == std::vector<double>{1.0});
  Rng rng(1);
  CHECK(dp_ground({}, dp, rng) == kNewRegion);
  CHECK_THROWS(dp_probabilities({-0.1}, dp));
  CHECK_THROWS(dp_probabilities({0.0}, DPConfig{0.0, 0.05}));

  const auto q = dp_probabilities({3.0, 1.0}, DPConfig{1.0, 0.5});
  const auto q2 = dp_probabilities({0.3, 0.1}, DPConfig{1.0, 0.05});
  double s = 0;
  for (double x : q) s += x;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i] == doctest::Approx(q2[i]).epsilon(1e-12));
}

TEST_CASE("dp grounding frequencies match analytic probabilities") {
  const DPConfig dp{1.0, 0.05};
  const std::vector<double> l = {0.3, 0.1};
  const auto p = dp_probabilities(l, dp);
  Rng rng(2024);
  const int n = 100000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) {
    const int g = dp_ground(l, dp, rng);
    counts[g == kNewRegion ? 2 : g] += 1;
  }
  for (int k = 0; k < 3; ++k) {
    const double sd = std::sqrt(n * p[k] * (1 - p[k]));
    CHECK(std::abs(counts[k] - n * p[k]) < 3 * sd);
  }
}

TEST_CASE("relation weights can be refit from labeled geometry") {
  RelationModel m = models().models[models().index("near")];
  std::fill(m.weights.begin(), m.weights.end(), 0.0);
  std::vector<LabeledGeometry> ex;
  const auto lm = RegionGeom::circle({0, 0}, 2.0);
  for (int i = 0; i < 40; ++i) {
    const double d = 0.5 * i;
    ex.push_back({RegionGeom::circle({d, 1.0}, 2.0), lm, Pose2{-5, 0, 0}, d < 6.0});
  }
  train_relation(m, ex);
  RelationModels ms = models();
  ms.models[ms.index("near")] = m;
  const int near = ms.index("near");
  CHECK(ms.score(near, RegionGeom::circle({2, 1}, 2.0), lm, {-5, 0, 0}) > std::log(0.5));
  CHECK(ms.score(near, RegionGeom::circle({15, 1}, 2.0), lm, {-5, 0, 0}) < std::log(0.5));
}
