#include "wayfinder/relations.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "wayfinder/grounding.hpp"

namespace wayfinder::rel {

namespace {

Vec2 heading_of(const Pose2& p) { return {std::cos(p.theta), std::sin(p.theta)}; }

Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }

/// Unit direction from robot toward the landmark; heading when they coincide.
Vec2 approach(const RegionGeom& lm, const Pose2& robot) {
  const Vec2 d = lm.center - robot.t();
  return d.norm() > 1e-9 ? Vec2(d.normalized()) : heading_of(robot);
}

bool isotropic(const RegionGeom& g) { return g.axis.half_length < 1.2 * g.axis.half_width || g.polygon.size() < 3; }

double robot_projection(const RegionGeom& lm, const Vec2& u, const Pose2& robot) {
  const double hl = isotropic(lm) ? lm.radius : lm.axis.half_length;
  return std::clamp((robot.t() - lm.center).dot(u), -hl, hl);
}

double half_length(const RegionGeom& g) { return isotropic(g) ? g.radius : g.axis.half_length; }
double half_width(const RegionGeom& g) { return isotropic(g) ? g.radius : g.axis.half_width; }

void require(const RegionGeom& g, const char* what) {
  if (g.degenerate()) throw DegenerateGeometryError(std::string(what) + " geometry is degenerate");
}

Eigen::Matrix2d oriented_cov(const Vec2& u, double sd_along, double sd_lat) {
  Eigen::Matrix2d r;
  r.col(0) = u;
  r.col(1) = perp(u);
  return r * Eigen::Vector2d(sd_along * sd_along, sd_lat * sd_lat).asDiagonal() * r.transpose();
}

}  // namespace

RegionGeom RegionGeom::from_polygon(const geo::Polygon& poly) {
  RegionGeom g;
  g.polygon = geo::convex_hull(poly);
  g.center = geo::centroid(g.polygon);
  g.radius = geo::circumradius(g.polygon);
  g.axis = geo::principal_axis(g.polygon);
  return g;
}

RegionGeom RegionGeom::circle(const Vec2& center, double radius) {
  RegionGeom g;
  g.center = center;
  g.radius = radius;
  for (int k = 0; k < 12; ++k) {
    const double a = 2.0 * geo::kPi * k / 12.0;
    g.polygon.emplace_back(center.x() + radius * std::cos(a), center.y() + radius * std::sin(a));
  }
  g.axis.center = center;
  g.axis.half_length = g.axis.half_width = radius;
  return g;
}

Vec2 oriented_axis(const RegionGeom& lm, const Pose2& robot) {
  if (isotropic(lm)) return approach(lm, robot);
  Vec2 u = lm.axis.dir;
  double s = (lm.center - robot.t()).dot(u);
  if (std::abs(s) < 0.25 * lm.axis.half_length) s = heading_of(robot).dot(u);
  return s < 0 ? Vec2(-u) : u;
}

std::vector<double> relation_features(const RegionGeom& fig, const RegionGeom& lm, const Pose2& robot) {
  std::vector<double> f(kFeatureCount, 0.0);
  const Vec2 u = oriented_axis(lm, robot);
  const Vec2 n = perp(u);
  const Vec2 d = fig.center - lm.center;
  f[kBias] = 1.0;
  f[kDistance] = d.norm();
  f[kAlong] = (d.dot(u) - robot_projection(lm, u, robot)) / std::max(2.0 * half_length(lm), 1.0);
  f[kLateral] = std::abs(d.dot(n)) / (half_width(lm) + fig.radius + 1.0);
  const Vec2 v = fig.center - robot.t();
  const Vec2 left(-std::sin(robot.theta), std::cos(robot.theta));
  f[kSide] = v.norm() > 1e-9 ? v.dot(left) / v.norm() : 0.0;
  f[kProgress] = d.dot(approach(lm, robot)) / (lm.radius + 1.0);
  f[kContains] = geo::contains(lm.polygon, fig.center) ? 1.0 : 0.0;
  f[kAdjacent] = geo::distance(lm.polygon, fig.center) - fig.radius < 1.0 ? 1.0 : 0.0;
  return f;
}

RelationModels RelationModels::from_json_text(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  RelationModels out;
  out.hypothesis_radius = j.value("hypothesis_radius", 2.5);
  if (j.contains("dp")) {
    out.dp.alpha = j["dp"].value("alpha", 1.0);
    out.dp.base = j["dp"].value("base", 0.01);
  }
  if (!(out.dp.alpha > 0) || !(out.dp.base > 0)) throw std::invalid_argument("dp parameters must be positive");
  for (const auto& r : j.at("relations")) {
    RelationModel m;
    m.name = r.at("name").get<std::string>();
    m.weights = r.at("weights").get<std::vector<double>>();
    if (m.weights.size() != kFeatureCount) throw std::invalid_argument("relation " + m.name + ": bad weight count");
    const auto& d = r.at("density");
    const std::string kind = d.at("kind").get<std::string>();
    if (kind == "axis") {
      m.density.kind = Density::Kind::Axis;
    } else if (kind == "radial") {
      m.density.kind = Density::Kind::Radial;
    } else if (kind == "direction") {
      m.density.kind = Density::Kind::Direction;
    } else {
      throw std::invalid_argument("relation " + m.name + ": unknown density kind " + kind);
    }
    m.density.dir = d.value("dir", std::string("ahead"));
    m.density.along = d.value("along", 0.9);
    m.density.spread = d.value("spread", 0.5);
    m.density.offset = d.value("offset", 3.0);
    out.models.push_back(std::move(m));
  }
  return out;
}

RelationModels RelationModels::load(const std::string& path) { return from_json_text(read_file(path)); }

const RelationModels& RelationModels::bundled() {
  static const RelationModels m = load(data_path("relations.json"));
  return m;
}

int RelationModels::index(std::string_view name) const {
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

double RelationModels::score(int relation, const RegionGeom& figure, const RegionGeom& landmark,
                             const Pose2& robot) const {
  require(figure, "figure");
  require(landmark, "landmark");
  const auto f = relation_features(figure, landmark, robot);
  const auto& w = models.at(relation).weights;
  double z = 0.0;
  for (int k = 0; k < kFeatureCount; ++k) z += w[k] * f[k];
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

geo::Gaussian2 RelationModels::density(int relation, const RegionGeom& lm, const Pose2& robot) const {
  require(lm, "landmark");
  const Density& d = models.at(relation).density;
  geo::Gaussian2 g;
  switch (d.kind) {
    case Density::Kind::Axis: {
      const Vec2 u = oriented_axis(lm, robot);
      const double len = 2.0 * half_length(lm);
      g.mean = lm.center + u * (robot_projection(lm, u, robot) + d.along * len);
      g.cov = oriented_cov(u, std::max(d.spread * len, 0.5), half_width(lm) + d.offset);
      break;
    }
    case Density::Kind::Radial: {
      g.mean = lm.center;
      const double sd = lm.radius + d.offset;
      g.cov = Eigen::Matrix2d::Identity() * sd * sd;
      break;
    }
    case Density::Kind::Direction: {
      Vec2 dir = approach(lm, robot);
      double reach = lm.radius + d.offset;
      if (d.dir == "behind") {
        dir = -dir;
      } else if (d.dir == "left" || d.dir == "right") {
        dir = Vec2(-std::sin(robot.theta), std::cos(robot.theta));
        if (d.dir == "right") dir = -dir;
      } else if (d.dir == "across") {
        const Vec2 u = oriented_axis(lm, robot);
        dir = perp(u);
        if (dir.dot(lm.center - robot.t()) < 0) dir = -dir;
        reach = half_width(lm) + d.offset;
      } else if (d.dir != "ahead") {
        throw std::invalid_argument("unknown density direction " + d.dir);
      }
      g.mean = lm.center + dir * reach;
      const double sd = d.spread * lm.radius + 1.5;
      g.cov = Eigen::Matrix2d::Identity() * sd * sd;
      break;
    }
  }
  return g;
}

ConstraintSample RelationModels::sample_constraint(int relation, const RegionGeom& landmark, const Pose2& robot,
                                                   Rng& rng) const {
  ConstraintSample s;
  s.density = density(relation, landmark, robot);
  const Eigen::Matrix2d l = s.density.cov.llt().matrixL();
  const double a = gaussian(rng), b = gaussian(rng);
  s.sample = s.density.mean + l * Eigen::Vector2d(a, b);
  return s;
}

double kernel(const geo::Gaussian2& g, const Vec2& p) { return std::exp(-0.5 * g.mahalanobis2(p)); }

std::vector<double> dp_probabilities(const std::vector<double>& likelihoods, const DPConfig& dp) {
  std::vector<double> p;
  double total = 0.0;
  for (double l : likelihoods) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("dp likelihoods must be finite and >= 0");
    p.push_back(l);
    total += l;
  }
  p.push_back(dp.alpha * dp.base);
  total += p.back();
  if (!(total > 0.0)) throw std::invalid_argument("dp grounding has zero total mass");
  for (double& x : p) x /= total;
  return p;
}

int dp_ground(const std::vector<double>& likelihoods, const DPConfig& dp, Rng& rng) {
  const auto p = dp_probabilities(likelihoods, dp);
  const double u = uniform01(rng);
  double c = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    c += p[i];
    if (u < c) return static_cast<int>(i);
  }
  return kNewRegion;
}

void train_relation(RelationModel& model, const std::vector<LabeledGeometry>& examples, double l2) {
  ground::LogisticProblem prob;
  prob.dim = kFeatureCount;
  for (const auto& ex : examples) {
    const auto f = relation_features(ex.figure, ex.landmark, ex.robot);
    ground::SparseVec v;
    for (int k = 0; k < kFeatureCount; ++k) {
      v.idx.push_back(k);
      v.val.push_back(f[k]);
    }
    ground::LogisticProblem::Instance in;
    in.buckets = {static_cast<int>(prob.buckets.size())};
    in.label = ex.holds;
    prob.buckets.push_back(std::move(v));
    prob.instances.push_back(in);
  }
  ground::TrainConfig cfg;
  cfg.l2 = l2;
  cfg.epochs = 500;
  ground::fit_logistic(prob, model.weights, cfg);
}

}  // namespace wayfinder::rel
