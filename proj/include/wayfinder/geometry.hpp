#pragma once

#include <vector>

#include <Eigen/Dense>

namespace wayfinder::geo {

using Vec2 = Eigen::Vector2d;
using Polygon = std::vector<Vec2>;

constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double a);

/// Planar pose (m, m, rad).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 t() const { return {x, y}; }
  Eigen::Vector3d vec() const { return {x, y, theta}; }
  static Pose2 from_vec(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
  bool operator==(const Pose2&) const = default;
};

/// a ⊕ b
Pose2 compose(const Pose2& a, const Pose2& b);
Pose2 inverse(const Pose2& a);
/// a⁻¹ ⊕ b
Pose2 between(const Pose2& a, const Pose2& b);
Vec2 transform(const Pose2& p, const Vec2& local);
Polygon transform(const Pose2& p, const Polygon& local);

struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  Vec2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool contains(const Vec2& p, double eps = 1e-9) const {
    return p.x() >= x0 - eps && p.x() <= x1 + eps && p.y() >= y0 - eps && p.y() <= y1 + eps;
  }
  /// Counter-clockwise corners.
  Polygon polygon() const { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }
};

/// Counter-clockwise hull; collinear points dropped. May return 1 or 2 points.
Polygon convex_hull(std::vector<Vec2> pts);
double area(const Polygon& poly);
/// Area centroid, falling back to the vertex mean for degenerate polygons.
Vec2 centroid(const Polygon& poly);
/// Distance to the polygon, 0 inside. Handles point and segment hulls.
double distance(const Polygon& poly, const Vec2& p);
bool contains(const Polygon& poly, const Vec2& p, double eps = 1e-9);
/// Positive-area intersection of two convex polygons; touching does not count.
bool overlaps(const Polygon& a, const Polygon& b, double eps = 1e-9);
/// Largest distance from the centroid to a vertex.
double circumradius(const Polygon& poly);

/// Principal axis of a region: unit direction of largest extent and half extents.
struct Axis {
  Vec2 center = Vec2::Zero();
  Vec2 dir = Vec2::UnitX();
  double half_length = 0.0;
  double half_width = 0.0;
};

Axis principal_axis(const Polygon& poly);

/// Bivariate Gaussian.
struct Gaussian2 {
  Vec2 mean = Vec2::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();

  /// Squared Mahalanobis distance of p.
  double mahalanobis2(const Vec2& p) const;
  double log_pdf(const Vec2& p) const;
};

}  // namespace wayfinder::geo
