#include "wayfinder/semmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace wayfinder::map {

void check_covariance(const Eigen::Matrix3d& cov) {
  if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + cov.cwiseAbs().maxCoeff())) {
    throw NonPsdError("covariance is not symmetric");
  }
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success) throw NonPsdError("covariance is not positive definite");
}

PoseGraph::PoseGraph() : means_{Pose2{}} {}

int PoseGraph::add_odometry(const Pose2& u, const Eigen::Matrix3d& cov) {
  check_covariance(cov);
  const int prev = size() - 1;
  means_.push_back(geo::compose(means_.back(), u));
  factors_.push_back({prev, prev + 1, u, cov});
  return prev + 1;
}

void PoseGraph::add_factor(int i, int j, const Pose2& z, const Eigen::Matrix3d& cov) {
  check_covariance(cov);
  if (i < 0 || j < 0 || i >= size() || j >= size() || i == j) throw std::out_of_range("pose factor endpoints");
  factors_.push_back({i, j, z, cov});
}

Eigen::Vector3d PoseGraph::residual(const Factor& f) const {
  const Pose2 d = geo::between(means_[f.i], means_[f.j]);
  return {d.x - f.z.x, d.y - f.z.y, geo::wrap_angle(d.theta - f.z.theta)};
}

double PoseGraph::objective() const {
  double s = 0.0;
  for (const auto& f : factors_) {
    const Eigen::Vector3d r = residual(f);
    s += r.dot(f.cov.ldlt().solve(r));
  }
  return s;
}

void PoseGraph::linearize(std::vector<Eigen::Triplet<double>>& h, Eigen::VectorXd& b) const {
  const int n = size() - 1;
  b = Eigen::VectorXd::Zero(3 * n);
  for (const auto& f : factors_) {
    const Pose2& xi = means_[f.i];
    const Pose2& xj = means_[f.j];
    const double c = std::cos(xi.theta), s = std::sin(xi.theta);
    const Vec2 d = xj.t() - xi.t();
    Eigen::Matrix3d ji, jj;
    ji << -c, -s, -s * d.x() + c * d.y(),  //
        s, -c, -c * d.x() - s * d.y(),     //
        0, 0, -1;
    jj << c, s, 0,  //
        -s, c, 0,   //
        0, 0, 1;
    const Eigen::Matrix3d omega = f.cov.inverse();
    const Eigen::Vector3d r = residual(f);
    const int bi = 3 * (f.i - 1), bj = 3 * (f.j - 1);
    const bool vi = f.i > 0, vj = f.j > 0;
    auto add_block = [&](int r0, int c0, const Eigen::Matrix3d& m) {
      for (int a = 0; a < 3; ++a) {
        for (int k = 0; k < 3; ++k) h.emplace_back(r0 + a, c0 + k, m(a, k));
      }
    };
    if (vi) {
      add_block(bi, bi, ji.transpose() * omega * ji);
      b.segment<3>(bi) += ji.transpose() * omega * r;
    }
    if (vj) {
      add_block(bj, bj, jj.transpose() * omega * jj);
      b.segment<3>(bj) += jj.transpose() * omega * r;
    }
    if (vi && vj) {
      add_block(bi, bj, ji.transpose() * omega * jj);
      add_block(bj, bi, jj.transpose() * omega * ji);
    }
  }
}

Eigen::SparseMatrix<double> PoseGraph::information() const {
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd b;
  linearize(trip, b);
  const int n = 3 * (size() - 1);
  Eigen::SparseMatrix<double> h(n, n);
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

bool PoseGraph::condition(int max_passes, double tol) {
  if (size() < 2) return true;
  const auto saved = means_;
  for (int pass = 0; pass < max_passes; ++pass) {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd b;
    linearize(trip, b);
    const int n = static_cast<int>(b.size());
    Eigen::SparseMatrix<double> h(n, n);
    h.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
    if (solver.info() != Eigen::Success) {
      means_ = saved;
      return false;
    }
    const Eigen::VectorXd delta = solver.solve(-b);
    if (solver.info() != Eigen::Success || !delta.allFinite() || (solver.vectorD().array() <= 0.0).any()) {
      means_ = saved;
      return false;
    }
    for (int k = 1; k < size(); ++k) {
      Pose2& m = means_[k];
      m.x += delta[3 * (k - 1)];
      m.y += delta[3 * (k - 1) + 1];
      m.theta = geo::wrap_angle(m.theta + delta[3 * (k - 1) + 2]);
    }
    if (delta.cwiseAbs().maxCoeff() < tol) break;
  }
  return true;
}

Eigen::Matrix3d PoseGraph::marginal_covariance(int i) const {
  if (i == 0) return Eigen::Matrix3d::Zero();
  const auto h = information();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(h.rows(), 3);
  e.block<3, 3>(3 * (i - 1), 0).setIdentity();
  const Eigen::MatrixXd x = solver.solve(e);
  return x.block<3, 3>(3 * (i - 1), 0);
}

geo::Polygon Region::shape() const {
  if (!observed.empty()) return observed;
  geo::Polygon out;
  const double r = std::max(radius, 1e-3);
  for (int k = 0; k < 12; ++k) {
    const double a = 2.0 * geo::kPi * k / 12.0;
    out.emplace_back(center.x() + r * std::cos(a), center.y() + r * std::sin(a));
  }
  return out;
}

Particle Particle::initial(int id, int type, std::size_t n_types, const geo::Polygon& observed) {
  Particle p;
  p.id = id;
  p.nodes.push_back({0, -1, 0});
  const int r = p.add_region(type, RegionStatus::Visited, n_types);
  Region& reg = *p.region(r);
  reg.members.push_back(0);
  reg.votes[type] += 1;
  reg.observed = observed;
  reg.center = observed.empty() ? Vec2::Zero() : geo::centroid(observed);
  reg.radius = observed.empty() ? 0.0 : geo::circumradius(observed);
  p.nodes[0].region = r;
  p.current_region = r;
  p.refresh_extents();
  return p;
}

Region* Particle::region(int id) {
  for (auto& r : regions) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

const Region* Particle::region(int id) const {
  for (const auto& r : regions) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

int Particle::add_region(int type, RegionStatus status, std::size_t n_types) {
  Region r;
  r.id = next_region_id++;
  r.type = type;
  r.status = status;
  r.votes.assign(n_types, 0);
  regions.push_back(std::move(r));
  return regions.back().id;
}

void Particle::remove_region(int id) {
  regions.erase(std::remove_if(regions.begin(), regions.end(), [id](const Region& r) { return r.id == id; }),
                regions.end());
}

void Particle::refresh_extents() {
  for (auto& r : regions) {
    if (!r.visited()) continue;
    std::vector<Vec2> pts;
    for (int m : r.members) pts.push_back(poses.mean(m).t());
    r.extent = geo::convex_hull(pts);
  }
}

namespace {

nlohmann::json polygon_json(const geo::Polygon& poly) {
  auto a = nlohmann::json::array();
  for (const auto& v : poly) a.push_back({v.x(), v.y()});
  return a;
}

const char* edge_kind_name(EdgeKind k) {
  switch (k) {
    case EdgeKind::Odometry:
      return "odometry";
    case EdgeKind::Transition:
      return "region-transition";
    case EdgeKind::Language:
      return "language-relation";
  }
  return "?";
}

}  // namespace

std::string Particle::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["log_weight"] = log_weight;
  j["current_region"] = current_region;
  auto nodes_j = nlohmann::json::array();
  for (const auto& n : nodes) {
    const Pose2& m = poses.mean(n.id);
    nodes_j.push_back({{"id", n.id}, {"region", n.region}, {"t", n.t}, {"mean", {m.x, m.y, m.theta}}});
  }
  j["nodes"] = nodes_j;
  auto regions_j = nlohmann::json::array();
  for (const auto& r : regions) {
    regions_j.push_back({{"id", r.id},
                         {"type", r.type},
                         {"status", r.visited() ? "visited" : "hypothesized"},
                         {"members", r.members},
                         {"extent", polygon_json(r.extent)},
                         {"observed", polygon_json(r.observed)},
                         {"center", {r.center.x(), r.center.y()}},
                         {"radius", r.radius}});
  }
  j["regions"] = regions_j;
  auto edges_j = nlohmann::json::array();
  for (const auto& e : edges) {
    nlohmann::json ej = {{"kind", edge_kind_name(e.kind)}, {"a", e.a}, {"b", e.b}};
    if (e.kind == EdgeKind::Language) {
      ej["relation"] = e.constraint.relation;
      ej["mean"] = {e.constraint.density.mean.x(), e.constraint.density.mean.y()};
      ej["sample"] = {e.constraint.sample.x(), e.constraint.sample.y()};
    }
    edges_j.push_back(ej);
  }
  j["edges"] = edges_j;
  auto b = nlohmann::json::array();
  for (const auto& x : bindings) b.push_back({x.figure, x.landmark});
  j["bindings"] = b;
  return j.dump();
}

std::uint64_t Particle::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_json()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void add_node_with_odometry(Particle& p, const Pose2& u, const Eigen::Matrix3d& cov, int t) {
  if (p.nodes.empty()) throw std::invalid_argument("particle has no nodes");
  const int prev = p.nodes.back().id;
  const int id = p.poses.add_odometry(u, cov);
  p.nodes.push_back({id, -1, t});
  p.edges.push_back({EdgeKind::Odometry, prev, id, {}});
}

void condition_pose_graph(Particle& p, const ConditionConfig& cfg) {
  if (p.poses.factors().empty()) return;
  if (!p.poses.condition(cfg.passes, cfg.tol)) p.flagged = true;
  p.refresh_extents();
}

void SemanticMapBelief::normalize() {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& p : particles) m = std::max(m, p.log_weight);
  if (!std::isfinite(m)) throw std::runtime_error("all particle weights are zero");
  double s = 0.0;
  for (const auto& p : particles) s += std::exp(p.log_weight - m);
  const double lz = m + std::log(s);
  for (auto& p : particles) p.log_weight -= lz;
}

std::vector<double> SemanticMapBelief::weights() const {
  std::vector<double> w;
  for (const auto& p : particles) w.push_back(std::exp(p.log_weight));
  return w;
}

const Particle& map_estimate(const SemanticMapBelief& belief) {
  if (belief.particles.empty()) throw std::invalid_argument("empty belief");
  const Particle* best = &belief.particles.front();
  for (const auto& p : belief.particles) {
    if (p.log_weight > best->log_weight || (p.log_weight == best->log_weight && p.id < best->id)) best = &p;
  }
  return *best;
}

std::vector<std::string> check_invariants(const Particle& p) {
  std::vector<std::string> errs;
  if (p.poses.size() == 0 || !(p.poses.mean(0) == Pose2{})) errs.push_back("anchor node is not at the zero pose");
  if (!(std::isfinite(p.log_weight) || p.log_weight == -std::numeric_limits<double>::infinity())) {
    errs.push_back("log-weight is NaN");
  }
  if (static_cast<int>(p.nodes.size()) != p.poses.size()) errs.push_back("node and pose counts differ");
  for (const auto& n : p.nodes) {
    const Region* r = p.region(n.region);
    if (!r) {
      errs.push_back("node " + std::to_string(n.id) + " has no region");
    } else if (std::count(r->members.begin(), r->members.end(), n.id) != 1) {
      errs.push_back("node " + std::to_string(n.id) + " missing from its region");
    }
  }
  for (const auto& r : p.regions) {
    if (!r.visited() && !r.members.empty()) errs.push_back("hypothesized region has members");
    if (!r.visited() && !(r.radius > 0.0)) errs.push_back("hypothesized region lacks an extent");
    if (r.visited() && r.members.empty()) errs.push_back("visited region has no members");
    for (int m : r.members) {
      if (m < 0 || m >= static_cast<int>(p.nodes.size()) || p.nodes[m].region != r.id) {
        errs.push_back("region " + std::to_string(r.id) + " lists a foreign node");
      }
    }
  }
  for (std::size_t a = 0; a < p.regions.size(); ++a) {
    for (std::size_t b = a + 1; b < p.regions.size(); ++b) {
      if (geo::overlaps(p.regions[a].extent, p.regions[b].extent)) {
        errs.push_back("regions " + std::to_string(p.regions[a].id) + " and " + std::to_string(p.regions[b].id) +
                       " overlap");
      }
    }
  }
  for (const auto& e : p.edges) {
    if (e.kind == EdgeKind::Language && (!p.region(e.a) || (e.b >= 0 && !p.region(e.b)))) {
      errs.push_back("language edge to a missing region");
    }
  }
  int connected = 0;
  for (const auto& f : p.poses.factors()) connected += (f.j == f.i + 1);
  if (connected < p.poses.size() - 1) errs.push_back("odometry chain is broken");
  if (p.current_region >= 0 && !p.region(p.current_region)) errs.push_back("current region missing");
  return errs;
}

}  // namespace wayfinder::map
