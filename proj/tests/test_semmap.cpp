#include <doctest.h>

#include <random>

#include "wayfinder/common.hpp"
#include "wayfinder/semmap.hpp"

#include "oracles.hpp"

using namespace wayfinder;
using namespace wayfinder::map;
using geo::Pose2;

using namespace wayfinder::oracle;

TEST_CASE("exact odometry composes") {
  PoseGraph g;
  g.add_odometry({1, 0, 0}, diag_cov(0.1, 0.05));
  g.add_odometry({1, 0, 0}, diag_cov(0.1, 0.05));
  CHECK(g.mean(2) == Pose2{2, 0, 0});
  g.add_odometry({0, 0, 0}, diag_cov(0.1, 0.05));
  CHECK(g.mean(3) == g.mean(2));
  const Pose2 turn = geo::compose({1, 2, 0.5}, {0.5, -1, 1.0});
  CHECK(turn.x == doctest::Approx(1 + std::cos(0.5) * 0.5 + std::sin(0.5)));
  CHECK(turn.theta == doctest::Approx(1.5));
}

TEST_CASE("non-positive-definite covariances are rejected") {
  PoseGraph g;
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(2, 2) = -1.0;
  CHECK_THROWS_AS(g.add_odometry({1, 0, 0}, bad), NonPsdError);
  bad = Eigen::Matrix3d::Identity();
  bad(0, 1) = 0.5;
  CHECK_THROWS_AS(g.add_odometry({1, 0, 0}, bad), NonPsdError);
  CHECK(g.size() == 1);
}

TEST_CASE("consistent chain has zero residuals at the mean") {
  PoseGraph g;
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int k = 0; k < 8; ++k) g.add_odometry({u(rng), u(rng), u(rng)}, diag_cov(0.2, 0.1));
  const Pose2 truth = geo::between(g.mean(2), g.mean(6));
  g.add_factor(2, 6, truth, diag_cov(0.2, 0.1));
  REQUIRE(g.condition(5));
  for (const auto& f : g.factors()) CHECK(g.residual(f).norm() < 1e-9);
  CHECK(g.mean(0) == Pose2{});
}

TEST_CASE("conflicting loop splits the disagreement evenly") {
  PoseGraph g;
  g.add_odometry({1, 0, 0}, diag_cov(0.1, 0.1));
  g.add_factor(0, 1, {2, 0, 0}, diag_cov(0.1, 0.1));
  REQUIRE(g.condition(10));
  CHECK(g.mean(1).x == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(g.mean(1).y == doctest::Approx(0.0));
}

TEST_CASE("conditioning matches a dense least-squares oracle") {
  std::mt19937 rng(42);
  for (int graph = 0; graph < 20; ++graph) {
    auto g = random_pose_graph(rng);
    const auto oracle = dense_oracle(g);
    REQUIRE(g.condition(100, 1e-14));
    for (int k = 0; k < g.size(); ++k) {
      CHECK(std::abs(g.mean(k).x - oracle[k].x) < 1e-6);
      CHECK(std::abs(g.mean(k).y - oracle[k].y) < 1e-6);
      CHECK(std::abs(geo::wrap_angle(g.mean(k).theta - oracle[k].theta)) < 1e-6);
    }
  }
}

TEST_CASE("one pass never increases the objective on a nearly linear graph") {
  PoseGraph g;
  for (int k = 0; k < 5; ++k) g.add_odometry({1, 0, 0.01}, diag_cov(0.1, 0.05));
  g.add_factor(0, 5, {5.3, 0.1, 0.0}, diag_cov(0.1, 0.05));
  const double before = g.objective();
  REQUIRE(g.condition(1));
  CHECK(g.objective() <= before);
}

TEST_CASE("marginal covariance matches sampled odometry chains") {
  const Eigen::Matrix3d cov = diag_cov(0.05, 0.03);
  const std::vector<Pose2> steps = {{1, 0, 0.2}, {1, 0.2, -0.1}, {0.5, 0, 0.3}, {1, 0, 0}};
  PoseGraph g;
  for (const auto& s : steps) g.add_odometry(s, cov);
  const int k = g.size() - 1;
  const Eigen::Matrix3d analytic = g.marginal_covariance(k);

  Rng rng(9);
  const Eigen::Matrix3d l = cov.llt().matrixL();
  const int samples = 100000;
  std::vector<Eigen::Vector3d> finals;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (int s = 0; s < samples; ++s) {
    Pose2 x;
    for (const auto& st : steps) {
      const Eigen::Vector3d e = l * Eigen::Vector3d(gaussian(rng), gaussian(rng), gaussian(rng));
      x = geo::compose(x, Pose2::from_vec(st.vec() + e));
    }
    finals.push_back(x.vec());
    mean += x.vec();
  }
  mean /= samples;
  Eigen::Matrix3d emp = Eigen::Matrix3d::Zero();
  for (const auto& f : finals) emp += (f - mean) * (f - mean).transpose();
  emp /= samples - 1;
  CHECK((emp - analytic).norm() / analytic.norm() < 0.05);
  CHECK(g.marginal_covariance(0).isZero());
}

TEST_CASE("particle invariants and deep copies") {
  const Eigen::Matrix3d cov = diag_cov(0.05, 0.02);
  Particle p = Particle::initial(0, 2, 17, geo::Rect{-2, -2, 2, 2}.polygon());
  CHECK(check_invariants(p).empty());
  add_node_with_odometry(p, {5, 0, 0}, cov, 1);
  const int r = p.add_region(3, RegionStatus::Visited, 17);
  p.nodes.back().region = r;
  p.region(r)->members.push_back(p.nodes.back().id);
  condition_pose_graph(p);
  CHECK(check_invariants(p).empty());

  Particle copy = p;
  const auto h = p.hash();
  add_node_with_odometry(copy, {1, 0, 0}, cov, 2);
  copy.nodes.back().region = r;
  copy.region(r)->members.push_back(copy.nodes.back().id);
  copy.refresh_extents();
  CHECK(p.hash() == h);
  CHECK(copy.hash() != h);

  const int hyp = p.add_region(4, RegionStatus::Hypothesized, 17);
  CHECK_FALSE(check_invariants(p).empty());
  p.region(hyp)->radius = 2.0;
  CHECK(check_invariants(p).empty());
}

TEST_CASE("overlapping member hulls violate the invariant") {
  const Eigen::Matrix3d cov = diag_cov(0.05, 0.02);
  Particle p = Particle::initial(0, 0, 17);
  const std::vector<Pose2> steps = {{2, 0, 0}, {0, 2, 0}, {-1, -1.5, 0}, {2, 0, 0}, {-2, 2.5, 0}};
  for (std::size_t k = 0; k < steps.size(); ++k) add_node_with_odometry(p, steps[k], cov, static_cast<int>(k) + 1);
  const int r1 = p.add_region(1, RegionStatus::Visited, 17);
  for (int n : {1, 2}) {
    p.nodes[n].region = 0;
    p.region(0)->members.push_back(n);
  }
  for (int n : {3, 4}) {
    p.nodes[n].region = r1;
    p.region(r1)->members.push_back(n);
  }
  p.nodes[5].region = 0;
  p.region(0)->members.push_back(5);
  p.refresh_extents();
  CHECK(check_invariants(p).empty());
  p.region(0)->members.pop_back();
  p.nodes[5].region = r1;
  p.region(r1)->members.push_back(5);
  p.refresh_extents();
  const auto errs = check_invariants(p);
  REQUIRE(errs.size() == 1);
  CHECK(errs[0].find("overlap") != std::string::npos);
}

TEST_CASE("map estimate picks the heaviest particle with id tie-break") {
  SemanticMapBelief b;
  b.particles.push_back(Particle::initial(0, 0, 17));
  CHECK(map_estimate(b).id == 0);
  b.particles.push_back(Particle::initial(1, 0, 17));
  b.particles[0].log_weight = std::log(0.7);
  b.particles[1].log_weight = std::log(0.3);
  CHECK(map_estimate(b).id == 0);
  b.particles[0].log_weight = b.particles[1].log_weight = std::log(0.5);
  std::swap(b.particles[0], b.particles[1]);
  CHECK(map_estimate(b).id == 0);
  b.particles[0].log_weight = 3.0;
  b.particles[1].log_weight = 1.0;
  b.normalize();
  double s = 0;
  for (double w : b.weights()) s += w;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("geometry helpers") {
  const auto sq = geo::Rect{0, 0, 4, 2}.polygon();
  CHECK(geo::area(sq) == doctest::Approx(8.0));
  CHECK(geo::centroid(sq).isApprox(geo::Vec2(2, 1)));
  CHECK(geo::distance(sq, {6, 1}) == doctest::Approx(2.0));
  CHECK(geo::distance(sq, {1, 1}) == 0.0);
  CHECK_FALSE(geo::overlaps(sq, geo::Rect{4, 0, 6, 2}.polygon()));
  CHECK(geo::overlaps(sq, geo::Rect{3, 1, 6, 2}.polygon()));
  const auto ax = geo::principal_axis(sq);
  CHECK(std::abs(ax.dir.x()) == doctest::Approx(1.0));
  CHECK(ax.half_length == doctest::Approx(2.0));
  CHECK(ax.half_width == doctest::Approx(1.0));
  CHECK(geo::convex_hull({{0, 0}, {1, 1}, {2, 2}}).size() == 2);
  const Pose2 a{1, 2, 0.3}, b{-1, 0.5, 2.0};
  const Pose2 back = geo::compose(a, geo::between(a, b));
  CHECK(back.x == doctest::Approx(b.x));
  CHECK(back.theta == doctest::Approx(b.theta));
}
