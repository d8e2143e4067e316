#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "wayfinder/sim.hpp"

using namespace wayfinder;
using namespace wayfinder::sim;

namespace {

const std::vector<std::string> kTypes = {"a", "b", "c"};

/// rows x cols grid of 4x4 rooms; doors from a random spanning tree plus extras.
WorldSpec grid_world(int rows, int cols, Rng& rng) {
  WorldSpec w;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      RegionSpec s;
      s.id = r * cols + c;
      s.type_index = static_cast<int>(uniform01(rng) * 3) % 3;
      s.type = kTypes[s.type_index];
      s.rect = {4.0 * c, 4.0 * r, 4.0 * c + 4, 4.0 * r + 4};
      w.regions.push_back(s);
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) pairs.push_back({r * cols + c, r * cols + c + 1});
      if (r + 1 < rows) pairs.push_back({r * cols + c, (r + 1) * cols + c});
    }
  }
  std::vector<int> comp(rows * cols);
  for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = static_cast<int>(i);
  auto find = [&](int x) {
    while (comp[x] != x) x = comp[x];
    return x;
  };
  std::shuffle(pairs.begin(), pairs.end(), rng);
  for (auto [a, b] : pairs) {
    const bool tree = find(a) != find(b);
    if (!tree && uniform01(rng) > 0.3) continue;
    comp[find(a)] = find(b);
    const Vec2 m = 0.5 * (w.regions[a].rect.center() + w.regions[b].rect.center());
    w.doorways.push_back({a, b, m});
  }
  w.validate();
  return w;
}

/// Frontier oracle: probe just past each door midpoint on both sides.
std::set<int> frontier_oracle(const WorldSpec& w, const std::vector<int>& visited) {
  std::set<int> out;
  for (std::size_t d = 0; d < w.doorways.size(); ++d) {
    const auto& door = w.doorways[d];
    const Vec2 across = (w.regions[door.b].rect.center() - w.regions[door.a].rect.center()).normalized() * 0.01;
    const int ra = w.region_at(door.midpoint - across);
    const int rb = w.region_at(door.midpoint + across);
    const bool va = std::count(visited.begin(), visited.end(), ra) > 0;
    const bool vb = std::count(visited.begin(), visited.end(), rb) > 0;
    if (va != vb) out.insert(w.door_node(static_cast<int>(d)));
  }
  return out;
}

/// Floyd–Warshall over centers and doors.
std::vector<double> brute_distances(const WorldSpec& w, int target) {
  const int n = w.node_count();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 1e18));
  for (int i = 0; i < n; ++i) d[i][i] = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      // i and j share a region: a center and its door, or two doors of one region
      for (const auto& r : w.regions) {
        auto member = [&](int node) {
          if (!w.is_door(node)) return node == r.id;
          const auto& dw = w.doorways[w.door_of(node)];
          return dw.a == r.id || dw.b == r.id;
        };
        if (member(i) && member(j) && (w.is_door(i) || w.is_door(j))) {
          d[i][j] = std::min(d[i][j], (w.position(i) - w.position(j)).norm());
        }
      }
    }
  }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = d[i][target];
  return out;
}

SensorConfig quiet() {
  SensorConfig c;
  c.p_valid = 1.0;
  c.odom_sigma_xy = 0.0;
  c.odom_sigma_theta = 0.0;
  return c;
}

}  // namespace

TEST_CASE("bundled worlds load and validate") {
  for (const char* name : {"sim-3room", "stata-lobby"}) {
    const auto w = WorldSpec::bundled(name);
    CHECK_NOTHROW(w.validate());
    CHECK(w.regions[w.goal_region].type == "kitchen");
    const auto s = WorldSpec::bundled(name).to_json();
    CHECK(s.find("\"regions\"") != std::string::npos);
  }
  const auto w = WorldSpec::bundled("sim-3room");
  CHECK(w.regions.size() == 6);
  CHECK(w.doorways.size() == 5);
}

TEST_CASE("invalid worlds are rejected") {
  Rng rng(1);
  const auto base = grid_world(2, 2, rng);
  auto overlap = base;
  overlap.regions[1].rect.x0 -= 1.0;
  CHECK_THROWS_AS(overlap.validate(), InvalidWorldError);
  auto split = base;
  split.doorways.clear();
  CHECK_THROWS_AS(split.validate(), InvalidWorldError);
  auto off = base;
  off.doorways[0].midpoint += Vec2(0.3, 0.3);
  CHECK_THROWS_AS(off.validate(), InvalidWorldError);
  auto start = base;
  start.start_region = 9;
  CHECK_THROWS_AS(start.validate(), InvalidWorldError);
  CHECK_THROWS_AS(WorldSpec::from_json_text(R"({"regions":[{"id":0,"type":"zzz","rect":[0,0,1,1]}],"doorways":[],"start":{"region":0}})", kTypes),
                  InvalidWorldError);
}

TEST_CASE("distances match an all-pairs oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = grid_world(3, 3, rng);
    const int target = static_cast<int>(uniform01(rng) * 9) % 9;
    const auto fast = w.distances_to(target);
    const auto slow = brute_distances(w, target);
    for (int n = 0; n < w.node_count(); ++n) CHECK(fast[n] == doctest::Approx(slow[n]).epsilon(1e-12));
  }
  const auto w = WorldSpec::bundled("sim-3room");
  // office center -> door (2,0) -> door (20,1.5) straight along the hallway -> kitchen center
  const double expect = 2.5 + std::hypot(18.0, 1.5) + 2.5;
  CHECK(w.shortest_path_length(0, 2) == doctest::Approx(expect));
}

TEST_CASE("frontiers match a geometric probe") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = grid_world(3, 4, rng);
    std::vector<int> visited;
    for (int r = 0; r < 12; ++r) {
      if (uniform01(rng) < 0.4) visited.push_back(r);
    }
    const auto f = expose_frontiers(w, visited);
    CHECK(std::set<int>(f.begin(), f.end()) == frontier_oracle(w, visited));
    const auto g = known_graph(w, visited, w.start_pose());
    CHECK(std::set<int>(g.frontiers.begin(), g.frontiers.end()) == frontier_oracle(w, visited));
    for (int fn : g.frontiers) {
      CHECK(g.is_frontier(fn));
      CHECK(g.known(fn));
    }
  }
  const auto w = WorldSpec::bundled("sim-3room");
  CHECK(expose_frontiers(w, {0}).size() == 1);
  CHECK(expose_frontiers(w, {0, 1}).size() == 4);
  CHECK(expose_frontiers(w, {0, 1, 2, 3, 4, 5}).empty());
}

TEST_CASE("known graph paths and map frame") {
  const auto w = WorldSpec::bundled("sim-3room");
  const auto g = known_graph(w, {0, 1}, w.start_pose());
  CHECK(g.pos[0].norm() == doctest::Approx(0.0));
  const int kitchen_door = w.door_node(w.door_between(1, 2));
  const auto p = g.path(0, kitchen_door);
  REQUIRE(p.size() == 3);
  CHECK(p[1] == 1);
  const auto line = g.polyline(p);
  CHECK(line.size() == 4);
  CHECK(g.path(0, 2).empty());
  const auto full = full_graph(w, w.start_pose());
  CHECK(full.frontiers.empty());
  CHECK(full.path(0, 2) == std::vector<int>{0, 1, 2});
}

TEST_CASE("noise-free odometry equals the true displacement") {
  const auto w = WorldSpec::bundled("sim-3room");
  Rng rng(3);
  RobotTruth at{w.start_pose(), w.start_region};
  for (const auto& path : {std::vector<int>{0, 1}, std::vector<int>{1, 2}, std::vector<int>{2, 1}}) {
    const auto s = step_robot(w, at, path, 17, quiet(), rng);
    const auto exact = geo::between(at.pose, s.truth.pose);
    CHECK(s.odometry == exact);
    CHECK(s.truth.region == path[1]);
    CHECK(s.z.transition);
    CHECK(s.z.type == w.regions[path[1]].type_index);
    CHECK(s.quanta == static_cast<int>(std::ceil(s.distance / 0.5 - 1e-9)));
    CHECK(w.region_at(s.truth.pose.t()) == s.truth.region);
    at = s.truth;
  }
  CHECK_THROWS_AS(step_robot(w, at, {0, 2}, 17, quiet(), rng), InvalidPathError);
  CHECK_THROWS_AS(step_robot(w, at, {1}, 17, quiet(), rng), InvalidPathError);
  const RobotTruth kitchen{{22.5, 1.5, 0.0}, 2};
  CHECK_THROWS_AS(step_robot(w, kitchen, {2, 0}, 17, quiet(), rng), InvalidPathError);
}

TEST_CASE("crossing a frontier door enters the region beyond") {
  const auto w = WorldSpec::bundled("sim-3room");
  Rng rng(3);
  RobotTruth at{w.start_pose(), 0};
  const auto s = step_robot(w, at, {0, w.door_node(w.door_between(0, 1))}, 17, quiet(), rng);
  CHECK(s.truth.region == 1);
  CHECK(s.truth.pose.t().isApprox(w.regions[1].rect.center()));
}

TEST_CASE("label validity frequencies") {
  SensorConfig cfg;
  cfg.p_valid = 0.8;
  Rng rng(99);
  const int n = 10000;
  int correct = 0;
  for (int i = 0; i < n; ++i) correct += sample_label(4, 17, cfg, rng) == 4;
  const double p = 0.8 + 0.2 / 17.0;
  CHECK(std::abs(correct - n * p) < 3.0 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("random walks are deterministic and stay inside regions") {
  const auto w = WorldSpec::bundled("stata-lobby");
  auto walk = [&](std::uint64_t seed) {
    Rng rng(seed);
    RobotTruth at{w.start_pose(), w.start_region};
    std::vector<double> trace;
    for (int k = 0; k < 50; ++k) {
      const auto doors = w.doors_of(at.region);
      const int d = doors[static_cast<std::size_t>(uniform01(rng) * doors.size()) % doors.size()];
      const auto s = step_robot(w, at, {at.region, w.door_node(d)}, 17, SensorConfig{}, rng);
      CHECK(w.region_at(s.truth.pose.t()) == s.truth.region);
      trace.push_back(s.odometry.x);
      trace.push_back(s.z.type);
      at = s.truth;
    }
    return trace;
  };
  CHECK(walk(5) == walk(5));
  CHECK(walk(5) != walk(6));
}

TEST_CASE("odometry covariance grows with distance") {
  SensorConfig c;
  const auto a = c.odometry_cov(1.0), b = c.odometry_cov(4.0);
  CHECK(b(0, 0) > a(0, 0));
  CHECK(a(0, 0) == doctest::Approx(0.02 * 0.02 + 1e-8));
  CHECK(a.llt().info() == Eigen::Success);
}
