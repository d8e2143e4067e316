#include "wayfinder/rbpf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace wayfinder::rbpf {

using map::EdgeKind;
using map::Region;
using map::RegionStatus;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<int> regions_of_type(const Particle& p, int type, int exclude = -1) {
  std::vector<int> out;
  for (const auto& r : p.regions) {
    if (r.type == type && r.id != exclude) out.push_back(r.id);
  }
  return out;
}

void note(std::vector<Modification>* mods, ModKind k, int region, int other = -1) {
  if (mods) mods->push_back({k, region, other});
}

int argmax_vote(const std::vector<int>& votes) {
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

void set_observed(Region& r, const Pose2& pose, const geo::Polygon& extent_local) {
  r.observed = extent_local.empty() ? geo::Polygon{} : geo::transform(pose, extent_local);
  if (r.observed.empty()) {
    r.center = pose.t();
    r.radius = 1.0;
  } else {
    r.center = geo::centroid(r.observed);
    r.radius = geo::circumradius(r.observed);
  }
}

void assign_node(Particle& p, int region, int type) {
  Region& r = *p.region(region);
  r.members.push_back(p.nodes.back().id);
  if (type >= 0 && type < static_cast<int>(r.votes.size())) {
    r.votes[type] += 1;
    r.type = argmax_vote(r.votes);
  }
  p.nodes.back().region = region;
  p.current_region = region;
}

/// Hypothesized region ahead of the robot under the broad prior.
int add_prior_hypothesis(Particle& p, int type, const Pose2& robot, const FilterContext& ctx, Rng& rng) {
  const int id = p.add_region(type, RegionStatus::Hypothesized, ctx.n_types);
  map::Constraint c;
  c.robot = robot;
  c.density.mean = robot.t() + ctx.config.prior_distance * Vec2(std::cos(robot.theta), std::sin(robot.theta));
  c.density.cov = Eigen::Matrix2d::Identity() * ctx.config.prior_sd * ctx.config.prior_sd;
  const double a = gaussian(rng), b = gaussian(rng);
  c.sample = c.density.mean + ctx.config.prior_sd * Vec2(a, b);
  c.log_likelihood = -0.5 * c.density.mahalanobis2(c.sample);
  Region& r = *p.region(id);
  r.center = c.sample;
  r.radius = ctx.relations->hypothesis_radius;
  p.edges.push_back({EdgeKind::Language, id, -1, c});
  return id;
}

map::Constraint sample_relation(const Particle& p, int relation, int landmark, const Pose2& robot,
                                const FilterContext& ctx, Rng& rng) {
  const auto s = ctx.relations->sample_constraint(relation, region_geom(*p.region(landmark)), robot, rng);
  map::Constraint c;
  c.relation = relation;
  c.robot = robot;
  c.density = s.density;
  c.sample = s.sample;
  c.log_likelihood = -0.5 * s.density.mahalanobis2(s.sample);
  return c;
}

/// Re-evaluates relation constraints of hypothesized figures whose landmark is
/// `landmark`; resamples when forced or when the log kernel shifts too far.
void refresh_constraints(Particle& p, int landmark, bool force, const FilterContext& ctx, Rng& rng,
                         std::vector<Modification>* mods) {
  for (auto& e : p.edges) {
    if (e.kind != EdgeKind::Language || e.b != landmark || e.constraint.relation < 0) continue;
    Region* fig = p.region(e.a);
    if (!fig || fig->visited()) continue;
    const auto g = ctx.relations->density(e.constraint.relation, region_geom(*p.region(landmark)), e.constraint.robot);
    const double ll = -0.5 * g.mahalanobis2(e.constraint.sample);
    if (!force && std::abs(ll - e.constraint.log_likelihood) <= ctx.config.resample_nats) continue;
    e.constraint = sample_relation(p, e.constraint.relation, landmark, e.constraint.robot, ctx, rng);
    fig->center = e.constraint.sample;
    note(mods, ModKind::ResampleConstraint, fig->id, landmark);
  }
}

void merge(Particle& p, int hyp, int visited, const FilterContext& ctx, Rng& rng, std::vector<Modification>* mods) {
  std::vector<map::Edge> kept;
  for (auto e : p.edges) {
    if (e.kind == EdgeKind::Language) {
      if (e.a == hyp && e.constraint.relation < 0) continue;
      if (e.a == hyp) e.a = visited;
      if (e.b == hyp) e.b = visited;
      if (e.a == e.b) continue;
    }
    kept.push_back(e);
  }
  p.edges = std::move(kept);
  for (auto& b : p.bindings) {
    if (b.figure == hyp) b.figure = visited;
    if (b.landmark == hyp) b.landmark = visited;
  }
  p.remove_region(hyp);
  note(mods, ModKind::MergeHypothesizedIntoVisited, visited, hyp);
  refresh_constraints(p, visited, true, ctx, rng, mods);
}

}  // namespace

const char* mod_name(ModKind k) {
  switch (k) {
    case ModKind::AddHypothesizedRegion:
      return "add-hypothesized-region";
    case ModKind::AddRelationEdge:
      return "add-relation-edge";
    case ModKind::AssignNodeToRegion:
      return "assign-node-to-region";
    case ModKind::NewVisitedRegion:
      return "new-visited-region";
    case ModKind::MergeHypothesizedIntoVisited:
      return "merge-hypothesized-into-visited";
    case ModKind::ResampleConstraint:
      return "resample-constraint";
  }
  return "?";
}

rel::RegionGeom region_geom(const Region& r) {
  if (r.visited() && r.observed.size() >= 3) return rel::RegionGeom::from_polygon(r.observed);
  return rel::RegionGeom::circle(r.center, std::max(r.radius, 0.5));
}

const geo::Gaussian2* hypothesis_density(const Particle& p, int region) {
  const geo::Gaussian2* out = nullptr;
  for (const auto& e : p.edges) {
    if (e.kind == EdgeKind::Language && e.a == region) out = &e.constraint.density;
  }
  return out;
}

double region_appearance_factor(bool matches, const AppearanceModel& m) {
  const double valid = matches ? m.p_match : m.p_mismatch;
  return valid * m.p_valid + m.p_invalid * (1.0 - m.p_valid);
}

double appearance_likelihood(const Particle& p, const Pose2& robot, const AppearanceObservation& z,
                             const AppearanceModel& m, std::size_t n_types) {
  if (z.type < 0) return 1.0;
  const geo::Polygon seen = z.extent_local.size() >= 3 ? geo::transform(robot, z.extent_local) : geo::Polygon{};
  double out = 1.0;
  bool explained = false;
  for (const auto& r : p.regions) {
    if (r.visited()) continue;
    const bool covers_robot = (r.center - robot.t()).norm() <= r.radius;
    const bool on_seen = !seen.empty() && geo::contains(seen, r.center);
    if (!covers_robot && !on_seen) continue;
    out *= region_appearance_factor(r.type == z.type, m);
    explained = true;
  }
  if (!explained && z.transition && n_types > 0) out = 1.0 / static_cast<double>(n_types);
  return out;
}

double language_log_likelihood(const Particle& p, const Pose2& robot, const AnnotationObservation& alpha,
                               const FilterContext& ctx) {
  const double floor = ctx.relations->dp.alpha * ctx.relations->dp.base;
  double out = 0.0;
  for (const auto& a : alpha.annotations) {
    double best = 0.0;
    for (int f : regions_of_type(p, a.figure)) {
      if (!a.has_relation()) {
        best = 1.0;
        break;
      }
      for (int l : regions_of_type(p, a.landmark, f)) {
        const double s = ctx.relations->score(a.relation, region_geom(*p.region(f)), region_geom(*p.region(l)), robot);
        best = std::max(best, std::exp(s));
      }
    }
    out += std::log(std::max(best, floor));
  }
  return out;
}

void apply_language_mods(Particle& p, const AnnotationObservation& alpha, const FilterContext& ctx, Rng& rng,
                         std::vector<Modification>* mods) {
  const Pose2 robot = p.pose();
  const auto& dp = ctx.relations->dp;
  for (const auto& a : alpha.annotations) {
    int lm = -1;
    if (a.has_relation()) {
      const auto cands = regions_of_type(p, a.landmark);
      const int g = rel::dp_ground(std::vector<double>(cands.size(), 1.0), dp, rng);
      if (g == rel::kNewRegion) {
        lm = add_prior_hypothesis(p, a.landmark, robot, ctx, rng);
        note(mods, ModKind::AddHypothesizedRegion, lm);
      } else {
        lm = cands[g];
      }
    }
    const auto cands = regions_of_type(p, a.figure, lm);
    std::vector<double> l;
    for (int f : cands) {
      l.push_back(lm < 0 ? 1.0
                         : std::exp(ctx.relations->score(a.relation, region_geom(*p.region(f)),
                                                         region_geom(*p.region(lm)), robot)));
    }
    const int g = rel::dp_ground(l, dp, rng);
    int fig = -1;
    if (g != rel::kNewRegion) {
      fig = cands[g];
      if (lm >= 0) {
        auto c = sample_relation(p, a.relation, lm, robot, ctx, rng);
        c.sample = p.region(fig)->center;
        c.log_likelihood = -0.5 * c.density.mahalanobis2(c.sample);
        p.edges.push_back({EdgeKind::Language, fig, lm, c});
        note(mods, ModKind::AddRelationEdge, fig, lm);
      }
    } else if (lm >= 0) {
      const auto c = sample_relation(p, a.relation, lm, robot, ctx, rng);
      fig = p.add_region(a.figure, RegionStatus::Hypothesized, ctx.n_types);
      p.region(fig)->center = c.sample;
      p.region(fig)->radius = ctx.relations->hypothesis_radius;
      p.edges.push_back({EdgeKind::Language, fig, lm, c});
      note(mods, ModKind::AddHypothesizedRegion, fig);
      note(mods, ModKind::AddRelationEdge, fig, lm);
    } else {
      fig = add_prior_hypothesis(p, a.figure, robot, ctx, rng);
      note(mods, ModKind::AddHypothesizedRegion, fig);
    }
    p.bindings.push_back({fig, lm});
  }
}

void apply_observation_mods(Particle& p, const AppearanceObservation& z, const FilterContext& ctx, Rng& rng,
                            std::vector<Modification>* mods) {
  const Pose2 robot = p.pose();
  p.refresh_extents();
  if (!z.transition) {
    const int cur = p.current_region;
    assign_node(p, cur, z.type);
    if (!z.extent_local.empty()) set_observed(*p.region(cur), robot, z.extent_local);
    p.refresh_extents();
    note(mods, ModKind::AssignNodeToRegion, cur);
    refresh_constraints(p, cur, false, ctx, rng, mods);
    return;
  }

  int revisit = -1;
  double best = ctx.config.proximity;
  for (const auto& r : p.regions) {
    if (!r.visited() || r.id == p.current_region || r.extent.empty()) continue;
    const double d = geo::distance(r.extent, robot.t());
    if (d < best) {
      best = d;
      revisit = r.id;
    }
  }
  if (revisit >= 0) {
    assign_node(p, revisit, z.type);
    p.refresh_extents();
    note(mods, ModKind::AssignNodeToRegion, revisit);
    return;
  }

  const int type = z.type >= 0 ? z.type : 0;
  const int v = p.add_region(type, RegionStatus::Visited, ctx.n_types);
  set_observed(*p.region(v), robot, z.extent_local);
  assign_node(p, v, z.type);
  p.edges.push_back({EdgeKind::Transition, p.nodes[p.nodes.size() - 2].id, p.nodes.back().id, {}});
  p.refresh_extents();
  note(mods, ModKind::NewVisitedRegion, v);

  std::vector<int> hyps;
  std::vector<double> l;
  const Vec2 center = p.region(v)->center;
  for (const auto& r : p.regions) {
    if (r.visited() || r.type != type) continue;
    const auto* g = hypothesis_density(p, r.id);
    hyps.push_back(r.id);
    l.push_back(g ? rel::kernel(*g, center) : 0.0);
  }
  if (hyps.empty()) return;
  const int g = rel::dp_ground(l, ctx.relations->dp, rng);
  if (g != rel::kNewRegion) merge(p, hyps[g], v, ctx, rng, mods);
}

Proposal propose(Particle& p, const StepInput& in, int t, const FilterContext& ctx, Rng& rng) {
  Proposal q;
  map::add_node_with_odometry(p, in.odometry, in.odometry_cov, t);
  const Pose2 robot = p.pose();
  q.log_language = in.alpha.empty() ? 0.0 : language_log_likelihood(p, robot, in.alpha, ctx);
  q.log_appearance = std::log(appearance_likelihood(p, robot, in.z, ctx.config.appearance, ctx.n_types));
  apply_language_mods(p, in.alpha, ctx, rng, &q.mods);
  apply_observation_mods(p, in.z, ctx, rng, &q.mods);
  return q;
}

void reweight(Particle& p, const Proposal& q) {
  const double inc = q.log_language + q.log_appearance;
  p.log_weight = std::isfinite(inc) && std::isfinite(p.log_weight) ? p.log_weight + inc : kNegInf;
}

double effective_sample_size(const std::vector<double>& w) {
  double s = 0.0, s2 = 0.0;
  for (double x : w) {
    s += x;
    s2 += x * x;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

std::vector<int> systematic_resample(const std::vector<double>& w, Rng& rng) {
  const int n = static_cast<int>(w.size());
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw std::runtime_error("all particle weights are zero");
  std::vector<int> out;
  const double u0 = uniform01(rng) / n;
  double c = w[0] / total;
  int i = 0;
  for (int k = 0; k < n; ++k) {
    const double u = u0 + static_cast<double>(k) / n;
    while (u > c && i < n - 1) c += w[++i] / total;
    out.push_back(i);
  }
  return out;
}

bool resample_if_needed(SemanticMapBelief& belief, double threshold, Rng& rng) {
  auto& ps = belief.particles;
  std::vector<double> w = belief.weights();
  if (!(std::accumulate(w.begin(), w.end(), 0.0) > 0.0)) throw std::runtime_error("all particle weights are zero");
  const double n = static_cast<double>(ps.size());
  if (effective_sample_size(w) >= threshold * n) return false;
  std::sort(ps.begin(), ps.end(), [](const Particle& a, const Particle& b) { return a.id < b.id; });
  w = belief.weights();
  const auto idx = systematic_resample(w, rng);
  std::vector<Particle> out;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.push_back(ps[idx[k]]);
    out.back().id = static_cast<int>(k);
    out.back().log_weight = -std::log(n);
  }
  ps = std::move(out);
  return true;
}

Filter::Filter(FilterContext ctx, std::uint64_t seed) : ctx_(std::move(ctx)), seed_(seed) {
  if (!ctx_.relations) ctx_.relations = &rel::RelationModels::bundled();
}

void Filter::start(const AppearanceObservation& z0) {
  belief_ = {};
  const int n = std::max(ctx_.config.particles, 1);
  const int type = z0.type >= 0 ? z0.type : 0;
  for (int i = 0; i < n; ++i) {
    belief_.particles.push_back(Particle::initial(i, type, ctx_.n_types, z0.extent_local));
    belief_.particles.back().log_weight = -std::log(static_cast<double>(n));
  }
}

void Filter::start_from(const Particle& p) {
  belief_ = {};
  belief_.particles.push_back(p);
  belief_.particles.back().id = 0;
  belief_.particles.back().log_weight = 0.0;
}

void Filter::step(const StepInput& input) {
  StepInput in = input;
  if (!ctx_.config.language) in.alpha = {};
  const int t = belief_.t + 1;
  proposals_.assign(belief_.particles.size(), {});
  for (std::size_t i = 0; i < belief_.particles.size(); ++i) {
    Particle& p = belief_.particles[i];
    Rng rng = stream_rng(seed_, static_cast<std::uint64_t>(p.id), static_cast<std::uint64_t>(t));
    proposals_[i] = propose(p, in, t, ctx_, rng);
    map::condition_pose_graph(p, ctx_.config.condition);
    reweight(p, proposals_[i]);
  }
  belief_.normalize();
  Rng rng = stream_rng(seed_, 0xffffffffULL, static_cast<std::uint64_t>(t));
  resampled_ = resample_if_needed(belief_, ctx_.config.ess_threshold, rng);
  belief_.t = t;
  if (trace) trace(trace_line());
}

std::string Filter::trace_line() const {
  nlohmann::json j;
  j["t"] = belief_.t;
  j["resampled"] = resampled_;
  j["particles"] = nlohmann::json::array();
  for (std::size_t i = 0; i < belief_.particles.size(); ++i) {
    const auto& p = belief_.particles[i];
    nlohmann::json pj;
    pj["id"] = p.id;
    pj["weight"] = std::exp(p.log_weight);
    int visited = 0, hyp = 0;
    for (const auto& r : p.regions) (r.visited() ? visited : hyp) += 1;
    pj["visited"] = visited;
    pj["hypothesized"] = hyp;
    auto mods = nlohmann::json::array();
    if (!resampled_ && i < proposals_.size()) {
      for (const auto& m : proposals_[i].mods) mods.push_back({{"kind", mod_name(m.kind)}, {"region", m.region}, {"other", m.other}});
    }
    pj["mods"] = mods;
    j["particles"].push_back(pj);
  }
  return j.dump();
}

}  // namespace wayfinder::rbpf
