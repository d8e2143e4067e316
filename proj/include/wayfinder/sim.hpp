#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "wayfinder/common.hpp"
#include "wayfinder/geometry.hpp"

namespace wayfinder::sim {

using geo::Pose2;
using geo::Vec2;

class InvalidWorldError : public std::invalid_argument {
 public:
  explicit InvalidWorldError(const std::string& m) : std::invalid_argument(m) {}
};

class InvalidPathError : public std::invalid_argument {
 public:
  explicit InvalidPathError(const std::string& m) : std::invalid_argument(m) {}
};

struct RegionSpec {
  int id = 0;
  std::string type;
  int type_index = -1;
  geo::Rect rect;
};

struct Doorway {
  int a = 0;
  int b = 0;
  Vec2 midpoint = Vec2::Zero();
};

/// Typed rectangular regions joined by doorways. Navigation nodes are region
/// centers (ids 0..R-1) followed by doorway midpoints (ids R..R+D-1).
class WorldSpec {
 public:
  std::string name;
  std::vector<RegionSpec> regions;
  std::vector<Doorway> doorways;
  int start_region = 0;
  double start_heading = 0.0;
  int goal_region = 0;

  /// Type names are resolved against `type_names` (the object-type inventory).
  static WorldSpec from_json_text(std::string_view text, const std::vector<std::string>& type_names);
  static WorldSpec load(const std::string& path, const std::vector<std::string>& type_names);
  /// Bundled world by name, resolved against the bundled symbol inventory.
  static WorldSpec bundled(std::string_view name);

  /// Throws InvalidWorldError on overlapping rectangles, a disconnected
  /// adjacency graph, misplaced doorways or a bad start/goal.
  void validate() const;

  std::string to_json() const;

  int node_count() const { return static_cast<int>(regions.size() + doorways.size()); }
  bool is_door(int node) const { return node >= static_cast<int>(regions.size()); }
  int door_node(int door) const { return static_cast<int>(regions.size()) + door; }
  int door_of(int node) const { return node - static_cast<int>(regions.size()); }
  Vec2 position(int node) const;

  Pose2 start_pose() const { return {regions[start_region].rect.center().x(), regions[start_region].rect.center().y(), start_heading}; }
  /// Region containing p (first match), or -1.
  int region_at(const Vec2& p) const;
  std::vector<int> doors_of(int region) const;
  /// First doorway joining a and b, or -1.
  int door_between(int a, int b) const;
  int other_side(int door, int region) const;
  double circumradius(int region) const;

  /// Shortest travel distance from every node to the center of `region`
  /// through doorways, moving in straight lines inside regions.
  std::vector<double> distances_to(int region) const;
  /// Length of the shortest center-to-center route.
  double shortest_path_length(int from_region, int to_region) const;
};

struct NavEdge {
  int to = 0;
  double length = 0.0;
  int door = -1;  ///< doorway crossed between two centers, or -1
};

/// Navigation graph known to the robot, in the map frame.
struct NavGraph {
  std::vector<Vec2> pos;  ///< indexed by node id
  std::vector<std::vector<NavEdge>> adj;
  std::vector<int> visited;    ///< V: center nodes of visited regions
  std::vector<int> frontiers;  ///< F: doorway nodes leading to unvisited regions
  std::vector<Vec2> door_pos;  ///< doorway midpoints, map frame

  bool known(int node) const;
  bool is_frontier(int node) const;
  /// Dijkstra from `from`; ties resolved toward lower predecessor ids.
  void shortest(int from, std::vector<double>& dist, std::vector<int>& prev) const;
  std::vector<int> path(int from, int to) const;
  /// Waypoints of a node path with doorway crossings inserted.
  std::vector<Vec2> polyline(const std::vector<int>& path) const;
};

/// Graph over visited region centers and frontier doorways.
NavGraph known_graph(const WorldSpec& w, const std::vector<int>& visited_regions, const Pose2& frame);
/// Every region center, no frontiers.
NavGraph full_graph(const WorldSpec& w, const Pose2& frame);

/// One frontier node per unexplored doorway adjacent to a visited region.
std::vector<int> expose_frontiers(const WorldSpec& w, const std::vector<int>& visited_regions);

struct SensorConfig {
  double p_valid = 0.9;            ///< p(v=1|R)
  std::vector<double> confusion;   ///< p(z|v=0); empty means uniform over all types
  double odom_sigma_xy = 0.02;     ///< per sqrt(m)
  double odom_sigma_theta = 0.005;  ///< per sqrt(m)
  double speed = 0.5;               ///< m/s
  double quantum = 0.5;             ///< m per step

  Eigen::Matrix3d odometry_cov(double distance) const;
};

/// Region appearance observation.
struct Appearance {
  int type = -1;
  bool transition = false;
  /// Boundary of the current region in the robot frame.
  geo::Polygon extent_local;
};

struct RobotTruth {
  Pose2 pose;
  int region = 0;
};

struct StepResult {
  RobotTruth truth;
  Pose2 odometry;
  Eigen::Matrix3d odometry_cov = Eigen::Matrix3d::Identity();
  Appearance z;
  double distance = 0.0;
  int quanta = 0;
};

/// Samples a region label from the validity/confusion model.
int sample_label(int true_type, std::size_t n_types, const SensorConfig& cfg, Rng& rng);

/// Observation of the robot's current region without moving.
Appearance observe(const WorldSpec& w, const RobotTruth& at, std::size_t n_types, const SensorConfig& cfg, Rng& rng,
                   bool transition);

/// Advances the robot one path segment: from its region center across one
/// doorway to the next region center. `path` starts at the current center and
/// its second node is an adjacent center or a doorway of the current region.
StepResult step_robot(const WorldSpec& w, const RobotTruth& at, const std::vector<int>& path, std::size_t n_types,
                      const SensorConfig& cfg, Rng& rng);

}  // namespace wayfinder::sim
