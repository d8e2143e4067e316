#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wayfinder/common.hpp"
#include "wayfinder/geometry.hpp"

namespace wayfinder::rel {

using geo::Pose2;
using geo::Vec2;

class DegenerateGeometryError : public std::invalid_argument {
 public:
  explicit DegenerateGeometryError(const std::string& m) : std::invalid_argument(m) {}
};

/// Region geometry as seen by relation models.
struct RegionGeom {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
  geo::Axis axis;
  geo::Polygon polygon;

  static RegionGeom from_polygon(const geo::Polygon& poly);
  static RegionGeom circle(const Vec2& center, double radius);
  bool degenerate() const { return !(radius > 1e-9); }
};

enum Feature : int { kBias = 0, kDistance, kAlong, kLateral, kSide, kProgress, kContains, kAdjacent, kFeatureCount };

/// Geometric features of figure relative to landmark, seen from the robot.
std::vector<double> relation_features(const RegionGeom& figure, const RegionGeom& landmark, const Pose2& robot);

/// Landmark axis direction oriented away from the robot (robot heading breaks ties).
Vec2 oriented_axis(const RegionGeom& landmark, const Pose2& robot);

struct Density {
  enum class Kind { Axis, Radial, Direction } kind = Kind::Radial;
  std::string dir = "ahead";  ///< ahead | behind | left | right | across
  double along = 0.9;
  double spread = 0.5;
  double offset = 3.0;
};

struct RelationModel {
  std::string name;
  std::vector<double> weights;
  Density density;
};

struct ConstraintSample {
  geo::Gaussian2 density;
  Vec2 sample = Vec2::Zero();
};

struct DPConfig {
  double alpha = 1.0;
  double base = 0.01;
};

class RelationModels {
 public:
  std::vector<RelationModel> models;
  double hypothesis_radius = 2.5;
  DPConfig dp;

  static RelationModels from_json_text(std::string_view text);
  static RelationModels load(const std::string& path);
  static const RelationModels& bundled();

  int index(std::string_view name) const;

  /// log σ(w·f) for the relation's weights.
  double score(int relation, const RegionGeom& figure, const RegionGeom& landmark, const Pose2& robot) const;
  /// Constraint density for the figure center.
  geo::Gaussian2 density(int relation, const RegionGeom& landmark, const Pose2& robot) const;
  ConstraintSample sample_constraint(int relation, const RegionGeom& landmark, const Pose2& robot, Rng& rng) const;
};

/// Unnormalized kernel exp(−½ m²) of a point under a density.
double kernel(const geo::Gaussian2& g, const Vec2& p);

/// Probabilities for each existing candidate followed by NEW.
std::vector<double> dp_probabilities(const std::vector<double>& likelihoods, const DPConfig& dp);

constexpr int kNewRegion = -1;

/// Samples an existing candidate index or kNewRegion.
int dp_ground(const std::vector<double>& likelihoods, const DPConfig& dp, Rng& rng);

struct LabeledGeometry {
  RegionGeom figure;
  RegionGeom landmark;
  Pose2 robot;
  bool holds = false;
};

/// Refits a relation's weights by logistic regression on labeled geometry.
void train_relation(RelationModel& model, const std::vector<LabeledGeometry>& examples, double l2 = 1e-3);

}  // namespace wayfinder::rel
