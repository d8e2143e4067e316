#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wayfinder/common.hpp"
#include "wayfinder/relations.hpp"
#include "wayfinder/semmap.hpp"
#include "wayfinder/sim.hpp"

namespace wayfinder::policy {

using geo::Pose2;
using geo::Vec2;
using Eigen::VectorXd;

class PolicyDimensionError : public std::invalid_argument {
 public:
  explicit PolicyDimensionError(const std::string& m) : std::invalid_argument(m) {}
};

class UnreachableGoalError : public std::runtime_error {
 public:
  explicit UnreachableGoalError(const std::string& m) : std::runtime_error(m) {}
};

enum Feature : int {
  kPathLength = 0,
  kHeadingChange,
  kDisplacement,
  kLandmarkArea,
  kStartDistance,
  kEndDistance,
  kDistanceChange,
  kBearing,
  kAbsent,
  kStop,
  kAtGoalType,
  kExplore,
  kFeatureDim
};

const char* feature_name(int f);

struct RobotState {
  Pose2 pose;       ///< map frame
  int node = 0;     ///< current region-center node
  const sim::NavGraph* graph = nullptr;
};

struct Action {
  bool stop = false;
  int target = -1;
  std::vector<int> path;

  bool operator==(const Action&) const = default;
};

/// One shortest path per reachable node of V ∪ F other than the current node,
/// ordered by target id, followed by stop.
std::vector<Action> enumerate_actions(const RobotState& s);

/// What the behavior asks for: a goal type, optionally constrained by a
/// relation to a landmark type.
struct Goal {
  int type = -1;
  int relation = -1;
  int landmark_type = -1;
};

/// Region of the goal type in this particle. Visited regions are tried before
/// hypothesized ones; within each, an annotation-bound figure first, then the
/// best-scoring region under the goal relation, then the nearest.
/// Returns -1 when the particle has no region of the goal type.
int select_landmark(const map::Particle& p, const Goal& goal, const Pose2& robot, const rel::RelationModels& models);

struct LandmarkView {
  bool present = false;
  Vec2 center = Vec2::Zero();
  double area = 0.0;
  bool visited = false;
  bool at_goal_type = false;  ///< current region's type equals the goal type
};

/// Optimistic travel distance on a known graph: to a visited landmark through
/// its nearest visited node, to a hypothesized one through the best frontier
/// and then in a straight line. Straight-line when no frontier is left.
class TravelMetric {
 public:
  explicit TravelMetric(const sim::NavGraph& g);
  double distance(int node, const LandmarkView& lm) const;

 private:
  const sim::NavGraph* g_;
  std::vector<std::vector<double>> dist_;  ///< indexed by node id; empty when unknown
};

LandmarkView landmark_view(const map::Particle& p, const Goal& goal, const Pose2& robot,
                           const rel::RelationModels& models);

/// Features of one action against one landmark view; `polyline` is the action's
/// waypoints starting at the robot.
/// `travel` = {start, end} landmark distances; Euclidean from the polyline when absent.
VectorXd features(const Action& a, const std::vector<Vec2>& polyline, bool frontier, const LandmarkView& lm,
                  std::optional<std::pair<double, double>> travel = std::nullopt);
VectorXd features(const RobotState& s, const Action& a, const LandmarkView& lm);

/// [Φ̂_1; …; Φ̂_K] of weighted per-particle features.
VectorXd moments(const std::vector<VectorXd>& phi, const std::vector<double>& weights, int k);

struct PolicyWeights {
  int k = 2;
  int d = kFeatureDim;
  VectorXd w;
  double lambda = 1e-3;
  double alpha0 = 0.5;
  double gamma = 0.5;

  static PolicyWeights zeros(int k = 2, int d = kFeatureDim);
  std::string to_json() const;
  static PolicyWeights from_json_text(std::string_view text);
  static PolicyWeights load(const std::string& path);
  void save(const std::string& path) const;
  static const char* schema();
};

double cost(const VectorXd& w, const VectorXd& f);

/// Argmin of wᵀF over candidates; ties go to the lowest index.
int argmin_cost(const VectorXd& w, const std::vector<VectorXd>& moments);

/// Moment vectors for every action under the belief.
std::vector<VectorXd> embed_actions(const RobotState& s, const std::vector<Action>& actions,
                                    const map::SemanticMapBelief& belief, const Goal& goal,
                                    const rel::RelationModels& models, int k);

int select_action(const PolicyWeights& w, const std::vector<VectorXd>& moments);

/// A labeled decision: moment vectors per action and the expert's choice.
struct Decision {
  std::vector<VectorXd> moments;
  int expert = 0;
};

double hinge_loss(const VectorXd& w, const Decision& d, double lambda);
VectorXd subgradient(const VectorXd& w, const Decision& d, double lambda);
double learning_rate(double alpha0, double gamma, long t);
VectorXd update_weights(const VectorXd& w, const VectorXd& g, long t, double alpha0, double gamma);

/// Index of the action whose endpoint is closest to `goal_region` in the true
/// world; stop when the robot is inside the goal region.
int expert_action(const sim::WorldSpec& world, const RobotState& s, const std::vector<Action>& actions,
                  int current_region, int goal_region);

/// Environment driven by DAgger.
class Rollout {
 public:
  virtual ~Rollout() = default;
  /// Current decision with the expert label.
  virtual Decision observe() = 0;
  /// Executes action `index`; returns true when the episode is over.
  virtual bool act(int index) = 0;
};

using RolloutFactory = std::function<std::unique_ptr<Rollout>(int iteration)>;

struct DaggerConfig {
  int iterations = 10;
  int epochs = 3;
  int k = 2;
  int d = kFeatureDim;
  double lambda = 1e-3;
  double alpha0 = 0.5;
  double gamma = 0.5;
  int max_decisions = 400;  ///< per rollout
};

struct IterationStats {
  int iteration = 0;
  double agreement = 0.0;  ///< on-policy agreement with the expert before the update
  double dataset_agreement = 0.0;  ///< agreement on the aggregated dataset after the update
  double mean_loss = 0.0;
  std::size_t dataset = 0;
};

struct DaggerResult {
  PolicyWeights weights;
  std::vector<IterationStats> curve;
};

/// Subgradient passes over a dataset in seeded shuffled order; `t` is the global step counter.
void train_epochs(PolicyWeights& w, const std::vector<Decision>& data, int epochs, long& t, Rng& rng);

/// Per-dimension RMS of all moment vectors in `data` (1 where the RMS vanishes).
VectorXd moment_scale(const std::vector<Decision>& data, Eigen::Index dim);

DaggerResult dagger_train(const std::vector<RolloutFactory>& scenarios, const DaggerConfig& cfg, std::uint64_t seed,
                          const std::function<void(const IterationStats&)>& progress = {});

}  // namespace wayfinder::policy
