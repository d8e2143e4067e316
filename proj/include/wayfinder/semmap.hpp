#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "wayfinder/geometry.hpp"

namespace wayfinder::map {

using geo::Pose2;
using geo::Vec2;

class NonPsdError : public std::invalid_argument {
 public:
  explicit NonPsdError(const std::string& m) : std::invalid_argument(m) {}
};

/// Gaussian over node poses in information form: relative-pose factors with
/// node 0 held fixed at the zero pose.
class PoseGraph {
 public:
  struct Factor {
    int i = 0;
    int j = 0;
    Pose2 z;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
  };

  PoseGraph();

  int size() const { return static_cast<int>(means_.size()); }
  const Pose2& mean(int i) const { return means_.at(i); }
  const std::vector<Pose2>& means() const { return means_; }
  const std::vector<Factor>& factors() const { return factors_; }

  /// Appends a node at mean(prev) ⊕ u joined by an odometry factor.
  int add_odometry(const Pose2& u, const Eigen::Matrix3d& cov);
  /// Adds a relative-pose factor between existing nodes.
  void add_factor(int i, int j, const Pose2& z, const Eigen::Matrix3d& cov);

  /// Residual between(mean_i, mean_j) − z with the angle wrapped.
  Eigen::Vector3d residual(const Factor& f) const;
  /// Σ rᵀ Σ⁻¹ r over all factors.
  double objective() const;

  /// Gauss-Newton passes on the linearized least-squares objective. Returns
  /// false and keeps the previous means when the system is singular.
  bool condition(int max_passes = 1, double tol = 1e-12);

  /// Information matrix over nodes 1..n-1 at the current means.
  Eigen::SparseMatrix<double> information() const;
  /// Marginal covariance of node i (zero for the anchor).
  Eigen::Matrix3d marginal_covariance(int i) const;

 private:
  void linearize(std::vector<Eigen::Triplet<double>>& h, Eigen::VectorXd& b) const;

  std::vector<Pose2> means_;
  std::vector<Factor> factors_;
};

/// Throws NonPsdError unless `cov` is symmetric positive definite.
void check_covariance(const Eigen::Matrix3d& cov);

struct Node {
  int id = 0;
  int region = -1;
  int t = 0;
};

enum class RegionStatus : int { Visited = 0, Hypothesized };
enum class EdgeKind : int { Odometry = 0, Transition, Language };

/// Sampled placement of a hypothesized region relative to a landmark.
struct Constraint {
  int relation = -1;
  Pose2 robot;  ///< robot pose when the constraint was sampled
  geo::Gaussian2 density;
  Vec2 sample = Vec2::Zero();
  double log_likelihood = 0.0;  ///< kernel value of the sample when last (re)sampled
};

struct Region {
  int id = 0;
  int type = 0;
  RegionStatus status = RegionStatus::Visited;
  std::vector<int> members;
  /// Hull of member node means (visited regions).
  geo::Polygon extent;
  /// Perceived boundary in the map frame (visited regions).
  geo::Polygon observed;
  /// Sampled center and radius (hypothesized) or observed centroid and circumradius.
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
  /// Label votes per object type.
  std::vector<int> votes;

  bool visited() const { return status == RegionStatus::Visited; }
  /// Geometry used for relations: observed boundary, else a square around center/radius.
  geo::Polygon shape() const;
};

struct Edge {
  EdgeKind kind = EdgeKind::Odometry;
  int a = 0;  ///< node ids for odometry/transition; region ids for language (figure)
  int b = 0;  ///< landmark region for language edges; -1 if none
  Constraint constraint;
};

/// Regions an annotation was grounded to in one particle.
struct Binding {
  int figure = -1;
  int landmark = -1;
};

struct Particle {
  int id = 0;
  double log_weight = 0.0;
  std::vector<Node> nodes;
  std::vector<Region> regions;
  std::vector<Edge> edges;
  PoseGraph poses;
  int current_region = -1;
  int next_region_id = 0;
  std::vector<Binding> bindings;
  bool flagged = false;

  /// One node at the origin in a new visited region of `type`.
  static Particle initial(int id, int type, std::size_t n_types, const geo::Polygon& observed = {});

  const Node& last_node() const { return nodes.back(); }
  Pose2 pose() const { return poses.mean(nodes.back().id); }
  Region* region(int id);
  const Region* region(int id) const;
  int add_region(int type, RegionStatus status, std::size_t n_types);
  void remove_region(int id);
  /// Recomputes member hulls from node means.
  void refresh_extents();

  std::string to_json() const;
  std::uint64_t hash() const;
};

/// Appends node n_t with odometry u (semmap motion extension).
void add_node_with_odometry(Particle& p, const Pose2& u, const Eigen::Matrix3d& cov, int t);

struct ConditionConfig {
  int passes = 1;
  double tol = 1e-12;
};

/// Gauss-Newton update of the particle's pose means; flags the particle on failure.
void condition_pose_graph(Particle& p, const ConditionConfig& cfg = {});

struct SemanticMapBelief {
  std::vector<Particle> particles;
  int t = 0;

  /// Shifts log-weights so the linear weights sum to 1.
  void normalize();
  std::vector<double> weights() const;
};

/// Highest-weight particle; ties go to the lowest particle id.
const Particle& map_estimate(const SemanticMapBelief& belief);

/// Semmap invariants: anchored pose graph, non-overlapping member hulls,
/// node-region consistency, finite weight, hypothesized regions memberless.
std::vector<std::string> check_invariants(const Particle& p);

}  // namespace wayfinder::map
