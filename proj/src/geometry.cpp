#include "wayfinder/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wayfinder::geo {

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

Pose2 compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, wrap_angle(a.theta + b.theta)};
}

Pose2 inverse(const Pose2& a) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return {-c * a.x - s * a.y, s * a.x - c * a.y, wrap_angle(-a.theta)};
}

Pose2 between(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  const double dx = b.x - a.x, dy = b.y - a.y;
  return {c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.theta - a.theta)};
}

Vec2 transform(const Pose2& p, const Vec2& local) {
  const double c = std::cos(p.theta), s = std::sin(p.theta);
  return {p.x + c * local.x() - s * local.y(), p.y + s * local.x() + c * local.y()};
}

Polygon transform(const Pose2& p, const Polygon& local) {
  Polygon out;
  out.reserve(local.size());
  for (const auto& v : local) out.push_back(transform(p, v));
  return out;
}

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

double segment_distance(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (a + t * d - p).norm();
}

}  // namespace

Polygon convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  Polygon h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

double area(const Polygon& poly) {
  if (poly.size() < 3) return 0.0;
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

Vec2 centroid(const Polygon& poly) {
  if (poly.empty()) return Vec2::Zero();
  double a = 0.0;
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0; i < poly.size() && poly.size() >= 3; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    const double w = p.x() * q.y() - q.x() * p.y();
    a += w;
    c += w * (p + q);
  }
  if (std::abs(a) > 1e-12) return c / (3.0 * a);
  Vec2 m = Vec2::Zero();
  for (const auto& p : poly) m += p;
  return m / static_cast<double>(poly.size());
}

bool contains(const Polygon& poly, const Vec2& p, double eps) {
  if (poly.size() < 3) return distance(poly, p) <= eps;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    if (cross(a, b, p) < -eps * (b - a).norm()) return false;
  }
  return true;
}

double distance(const Polygon& poly, const Vec2& p) {
  if (poly.empty()) return std::numeric_limits<double>::infinity();
  if (poly.size() == 1) return (poly[0] - p).norm();
  if (poly.size() >= 3 && contains(poly, p, 0.0)) return 0.0;
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    d = std::min(d, segment_distance(poly[i], poly[(i + 1) % poly.size()], p));
  }
  return d;
}

bool overlaps(const Polygon& a, const Polygon& b, double eps) {
  if (a.size() < 3 || b.size() < 3) return false;
  for (const Polygon* poly : {&a, &b}) {
    for (std::size_t i = 0; i < poly->size(); ++i) {
      const Vec2 e = (*poly)[(i + 1) % poly->size()] - (*poly)[i];
      const Vec2 n(-e.y(), e.x());
      double amin = std::numeric_limits<double>::infinity(), amax = -amin;
      double bmin = amin, bmax = -amin;
      for (const auto& v : a) {
        amin = std::min(amin, n.dot(v));
        amax = std::max(amax, n.dot(v));
      }
      for (const auto& v : b) {
        bmin = std::min(bmin, n.dot(v));
        bmax = std::max(bmax, n.dot(v));
      }
      if (amax <= bmin + eps * n.norm() || bmax <= amin + eps * n.norm()) return false;
    }
  }
  return true;
}

double circumradius(const Polygon& poly) {
  const Vec2 c = centroid(poly);
  double r = 0.0;
  for (const auto& v : poly) r = std::max(r, (v - c).norm());
  return r;
}

Axis principal_axis(const Polygon& poly) {
  Axis ax;
  ax.center = centroid(poly);
  if (poly.size() < 2) return ax;
  Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
  for (const auto& v : poly) s += (v - ax.center) * (v - ax.center).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(s);
  ax.dir = es.eigenvectors().col(1).normalized();
  if (ax.dir.x() < -1e-12 || (std::abs(ax.dir.x()) <= 1e-12 && ax.dir.y() < 0)) ax.dir = -ax.dir;
  const Vec2 n(-ax.dir.y(), ax.dir.x());
  for (const auto& v : poly) {
    ax.half_length = std::max(ax.half_length, std::abs((v - ax.center).dot(ax.dir)));
    ax.half_width = std::max(ax.half_width, std::abs((v - ax.center).dot(n)));
  }
  return ax;
}

double Gaussian2::mahalanobis2(const Vec2& p) const {
  const Vec2 d = p - mean;
  return d.dot(cov.ldlt().solve(d));
}

double Gaussian2::log_pdf(const Vec2& p) const {
  return -0.5 * mahalanobis2(p) - std::log(2.0 * kPi) - 0.5 * std::log(cov.determinant());
}

}  // namespace wayfinder::geo
