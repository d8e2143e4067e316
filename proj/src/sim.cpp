#include "wayfinder/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <json.hpp>

#include "wayfinder/grounding.hpp"

namespace wayfinder::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool on_boundary(const geo::Rect& r, const Vec2& p) {
  constexpr double eps = 1e-6;
  if (!r.contains(p, eps)) return false;
  return std::abs(p.x() - r.x0) < eps || std::abs(p.x() - r.x1) < eps || std::abs(p.y() - r.y0) < eps ||
         std::abs(p.y() - r.y1) < eps;
}

/// Dijkstra over an adjacency list; ties keep the lower predecessor.
void dijkstra(const std::vector<std::vector<NavEdge>>& adj, int from, std::vector<double>& dist,
              std::vector<int>& prev) {
  dist.assign(adj.size(), kInf);
  prev.assign(adj.size(), -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[from] = 0.0;
  pq.push({0.0, from});
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const auto& e : adj[u]) {
      const double nd = d + e.length;
      if (nd < dist[e.to] - 1e-12) {
        dist[e.to] = nd;
        prev[e.to] = u;
        pq.push({nd, e.to});
      } else if (std::abs(nd - dist[e.to]) <= 1e-12 && u < prev[e.to]) {
        prev[e.to] = u;
      }
    }
  }
}

}  // namespace

WorldSpec WorldSpec::from_json_text(std::string_view text, const std::vector<std::string>& type_names) {
  const auto j = nlohmann::json::parse(text);
  WorldSpec w;
  w.name = j.value("name", std::string("world"));
  for (const auto& r : j.at("regions")) {
    RegionSpec s;
    s.id = r.at("id").get<int>();
    s.type = r.at("type").get<std::string>();
    const auto it = std::find(type_names.begin(), type_names.end(), s.type);
    if (it == type_names.end()) throw InvalidWorldError("unknown region type " + s.type);
    s.type_index = static_cast<int>(it - type_names.begin());
    const auto rect = r.at("rect").get<std::vector<double>>();
    if (rect.size() != 4) throw InvalidWorldError("rect needs 4 numbers");
    s.rect = {rect[0], rect[1], rect[2], rect[3]};
    if (s.id != static_cast<int>(w.regions.size())) throw InvalidWorldError("region ids must be 0..R-1 in order");
    w.regions.push_back(s);
  }
  for (const auto& d : j.at("doorways")) {
    const auto m = d.at("midpoint").get<std::vector<double>>();
    w.doorways.push_back({d.at("a").get<int>(), d.at("b").get<int>(), Vec2(m.at(0), m.at(1))});
  }
  w.start_region = j.at("start").at("region").get<int>();
  w.start_heading = j.at("start").value("heading", 0.0);
  w.goal_region = j.value("goal_region", 0);
  w.validate();
  return w;
}

WorldSpec WorldSpec::load(const std::string& path, const std::vector<std::string>& type_names) {
  return from_json_text(read_file(path), type_names);
}

WorldSpec WorldSpec::bundled(std::string_view name) {
  std::vector<std::string> names;
  for (const auto& t : ground::SymbolSpace::bundled().object_types) names.push_back(t.name);
  return load(data_path("worlds/" + std::string(name) + ".json"), names);
}

void WorldSpec::validate() const {
  const int nr = static_cast<int>(regions.size());
  if (nr == 0) throw InvalidWorldError("world has no regions");
  for (int a = 0; a < nr; ++a) {
    const auto& r = regions[a].rect;
    if (!(r.width() > 0 && r.height() > 0)) throw InvalidWorldError("region " + std::to_string(a) + " is empty");
    for (int b = a + 1; b < nr; ++b) {
      if (geo::overlaps(r.polygon(), regions[b].rect.polygon())) {
        throw InvalidWorldError("regions " + std::to_string(a) + " and " + std::to_string(b) + " overlap");
      }
    }
  }
  for (const auto& d : doorways) {
    if (d.a < 0 || d.b < 0 || d.a >= nr || d.b >= nr || d.a == d.b) throw InvalidWorldError("bad doorway endpoints");
    if (!on_boundary(regions[d.a].rect, d.midpoint) || !on_boundary(regions[d.b].rect, d.midpoint)) {
      throw InvalidWorldError("doorway " + std::to_string(d.a) + "-" + std::to_string(d.b) + " is off the boundary");
    }
  }
  std::vector<char> seen(nr, 0);
  std::vector<int> stack = {0};
  seen[0] = 1;
  while (!stack.empty()) {
    const int r = stack.back();
    stack.pop_back();
    for (const auto& d : doorways) {
      for (auto [x, y] : {std::pair{d.a, d.b}, std::pair{d.b, d.a}}) {
        if (x == r && !seen[y]) {
          seen[y] = 1;
          stack.push_back(y);
        }
      }
    }
  }
  if (std::count(seen.begin(), seen.end(), 1) != nr) throw InvalidWorldError("adjacency graph is disconnected");
  if (start_region < 0 || start_region >= nr) throw InvalidWorldError("start region out of range");
  if (goal_region < 0 || goal_region >= nr) throw InvalidWorldError("goal region out of range");
}

std::string WorldSpec::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  for (const auto& r : regions) {
    j["regions"].push_back({{"id", r.id}, {"type", r.type}, {"rect", {r.rect.x0, r.rect.y0, r.rect.x1, r.rect.y1}}});
  }
  for (const auto& d : doorways) {
    j["doorways"].push_back({{"a", d.a}, {"b", d.b}, {"midpoint", {d.midpoint.x(), d.midpoint.y()}}});
  }
  j["start"] = {{"region", start_region}, {"heading", start_heading}};
  j["goal_region"] = goal_region;
  return j.dump();
}

Vec2 WorldSpec::position(int node) const {
  return is_door(node) ? doorways.at(door_of(node)).midpoint : regions.at(node).rect.center();
}

int WorldSpec::region_at(const Vec2& p) const {
  for (const auto& r : regions) {
    if (r.rect.contains(p)) return r.id;
  }
  return -1;
}

std::vector<int> WorldSpec::doors_of(int region) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < doorways.size(); ++i) {
    if (doorways[i].a == region || doorways[i].b == region) out.push_back(static_cast<int>(i));
  }
  return out;
}

int WorldSpec::door_between(int a, int b) const {
  for (std::size_t i = 0; i < doorways.size(); ++i) {
    const auto& d = doorways[i];
    if ((d.a == a && d.b == b) || (d.a == b && d.b == a)) return static_cast<int>(i);
  }
  return -1;
}

int WorldSpec::other_side(int door, int region) const {
  const auto& d = doorways.at(door);
  if (d.a == region) return d.b;
  if (d.b == region) return d.a;
  return -1;
}

double WorldSpec::circumradius(int region) const {
  const auto& r = regions.at(region).rect;
  return 0.5 * std::hypot(r.width(), r.height());
}

std::vector<double> WorldSpec::distances_to(int region) const {
  std::vector<std::vector<NavEdge>> adj(node_count());
  auto link = [&](int a, int b) {
    const double l = (position(a) - position(b)).norm();
    adj[a].push_back({b, l, -1});
    adj[b].push_back({a, l, -1});
  };
  for (const auto& r : regions) {
    const auto doors = doors_of(r.id);
    for (std::size_t i = 0; i < doors.size(); ++i) {
      link(r.id, door_node(doors[i]));
      for (std::size_t k = i + 1; k < doors.size(); ++k) link(door_node(doors[i]), door_node(doors[k]));
    }
  }
  std::vector<double> dist;
  std::vector<int> prev;
  dijkstra(adj, region, dist, prev);
  return dist;
}

double WorldSpec::shortest_path_length(int from_region, int to_region) const {
  return distances_to(to_region).at(from_region);
}

bool NavGraph::known(int node) const {
  return std::count(visited.begin(), visited.end(), node) || std::count(frontiers.begin(), frontiers.end(), node);
}

bool NavGraph::is_frontier(int node) const { return std::count(frontiers.begin(), frontiers.end(), node) > 0; }

void NavGraph::shortest(int from, std::vector<double>& dist, std::vector<int>& prev) const {
  dijkstra(adj, from, dist, prev);
}

std::vector<int> NavGraph::path(int from, int to) const {
  std::vector<double> dist;
  std::vector<int> prev;
  shortest(from, dist, prev);
  if (!std::isfinite(dist.at(to))) return {};
  std::vector<int> out = {to};
  while (out.back() != from) out.push_back(prev[out.back()]);
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<Vec2> NavGraph::polyline(const std::vector<int>& p) const {
  std::vector<Vec2> out;
  if (p.empty()) return out;
  out.push_back(pos[p[0]]);
  for (std::size_t i = 1; i < p.size(); ++i) {
    for (const auto& e : adj[p[i - 1]]) {
      if (e.to == p[i] && e.door >= 0) out.push_back(door_pos[e.door]);
    }
    out.push_back(pos[p[i]]);
  }
  return out;
}

namespace {

NavGraph empty_graph(const WorldSpec& w, const Pose2& frame) {
  NavGraph g;
  const Pose2 inv = geo::inverse(frame);
  for (int n = 0; n < w.node_count(); ++n) g.pos.push_back(geo::transform(inv, w.position(n)));
  for (const auto& d : w.doorways) g.door_pos.push_back(geo::transform(inv, d.midpoint));
  g.adj.resize(w.node_count());
  return g;
}

void link_centers(NavGraph& g, int a, int b, int door) {
  const double l = (g.pos[a] - g.door_pos[door]).norm() + (g.door_pos[door] - g.pos[b]).norm();
  g.adj[a].push_back({b, l, door});
  g.adj[b].push_back({a, l, door});
}

}  // namespace

std::vector<int> expose_frontiers(const WorldSpec& w, const std::vector<int>& visited_regions) {
  std::vector<char> vis(w.regions.size(), 0);
  for (int r : visited_regions) vis.at(r) = 1;
  std::vector<int> out;
  for (std::size_t i = 0; i < w.doorways.size(); ++i) {
    const auto& d = w.doorways[i];
    if (vis[d.a] != vis[d.b]) out.push_back(w.door_node(static_cast<int>(i)));
  }
  return out;
}

NavGraph known_graph(const WorldSpec& w, const std::vector<int>& visited_regions, const Pose2& frame) {
  NavGraph g = empty_graph(w, frame);
  std::vector<char> vis(w.regions.size(), 0);
  for (int r : visited_regions) vis.at(r) = 1;
  for (std::size_t r = 0; r < w.regions.size(); ++r) {
    if (vis[r]) g.visited.push_back(static_cast<int>(r));
  }
  g.frontiers = expose_frontiers(w, visited_regions);
  for (std::size_t i = 0; i < w.doorways.size(); ++i) {
    const auto& d = w.doorways[i];
    const int door = static_cast<int>(i);
    if (vis[d.a] && vis[d.b]) {
      link_centers(g, d.a, d.b, door);
    } else if (vis[d.a] || vis[d.b]) {
      const int c = vis[d.a] ? d.a : d.b;
      const int f = w.door_node(door);
      const double l = (g.pos[c] - g.pos[f]).norm();
      g.adj[c].push_back({f, l, -1});
      g.adj[f].push_back({c, l, -1});
    }
  }
  return g;
}

NavGraph full_graph(const WorldSpec& w, const Pose2& frame) {
  NavGraph g = empty_graph(w, frame);
  for (std::size_t r = 0; r < w.regions.size(); ++r) g.visited.push_back(static_cast<int>(r));
  for (std::size_t i = 0; i < w.doorways.size(); ++i) link_centers(g, w.doorways[i].a, w.doorways[i].b, static_cast<int>(i));
  return g;
}

Eigen::Matrix3d SensorConfig::odometry_cov(double distance) const {
  const double d = std::max(distance, 0.0);
  return Eigen::Vector3d(odom_sigma_xy * odom_sigma_xy * d + 1e-8, odom_sigma_xy * odom_sigma_xy * d + 1e-8,
                         odom_sigma_theta * odom_sigma_theta * d + 1e-8)
      .asDiagonal();
}

int sample_label(int true_type, std::size_t n_types, const SensorConfig& cfg, Rng& rng) {
  const double v = uniform01(rng);
  const double u = uniform01(rng);
  if (v < cfg.p_valid) return true_type;
  if (cfg.confusion.empty()) return std::min(static_cast<int>(u * static_cast<double>(n_types)), static_cast<int>(n_types) - 1);
  double c = 0.0;
  for (std::size_t k = 0; k < cfg.confusion.size(); ++k) {
    c += cfg.confusion[k];
    if (u < c) return static_cast<int>(k);
  }
  return static_cast<int>(cfg.confusion.size()) - 1;
}

Appearance observe(const WorldSpec& w, const RobotTruth& at, std::size_t n_types, const SensorConfig& cfg, Rng& rng,
                   bool transition) {
  Appearance z;
  z.transition = transition;
  z.type = sample_label(w.regions.at(at.region).type_index, n_types, cfg, rng);
  z.extent_local = geo::transform(geo::inverse(at.pose), w.regions[at.region].rect.polygon());
  return z;
}

StepResult step_robot(const WorldSpec& w, const RobotTruth& at, const std::vector<int>& path, std::size_t n_types,
                      const SensorConfig& cfg, Rng& rng) {
  if (path.size() < 2) throw InvalidPathError("path needs at least two nodes");
  if (path[0] != at.region) throw InvalidPathError("path does not start at the current region center");
  const int next = path[1];
  if (next < 0 || next >= w.node_count()) throw InvalidPathError("unknown node " + std::to_string(next));
  int door = -1, target = -1;
  if (w.is_door(next)) {
    door = w.door_of(next);
    target = w.other_side(door, at.region);
  } else {
    target = next;
    door = w.door_between(at.region, target);
  }
  if (door < 0 || target < 0) throw InvalidPathError("no doorway from region " + std::to_string(at.region));

  const Vec2 a = w.regions[at.region].rect.center();
  const Vec2 m = w.doorways[door].midpoint;
  const Vec2 b = w.regions[target].rect.center();
  StepResult out;
  out.distance = (m - a).norm() + (b - m).norm();
  out.quanta = static_cast<int>(std::ceil(out.distance / cfg.quantum - 1e-9));
  const Vec2 dir = (b - m).norm() > 1e-9 ? Vec2(b - m) : Vec2(m - a);
  out.truth.pose = {b.x(), b.y(), dir.norm() > 1e-9 ? std::atan2(dir.y(), dir.x()) : at.pose.theta};
  out.truth.region = target;

  const Pose2 exact = geo::between(at.pose, out.truth.pose);
  out.odometry_cov = cfg.odometry_cov(out.distance);
  const Eigen::Matrix3d l = out.odometry_cov.llt().matrixL();
  const double n0 = gaussian(rng), n1 = gaussian(rng), n2 = gaussian(rng);
  const Eigen::Vector3d noise = l * Eigen::Vector3d(n0, n1, n2);
  const bool exact_odometry = cfg.odom_sigma_xy == 0.0 && cfg.odom_sigma_theta == 0.0;
  out.odometry = exact_odometry ? exact : Pose2{exact.x + noise[0], exact.y + noise[1], geo::wrap_angle(exact.theta + noise[2])};
  out.z = observe(w, out.truth, n_types, cfg, rng, true);
  return out;
}

}  // namespace wayfinder::sim
