#include "wayfinder/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "wayfinder/rbpf.hpp"

namespace wayfinder::policy {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_dim(const VectorXd& w, const VectorXd& f) {
  if (w.size() != f.size()) {
    throw PolicyDimensionError("weights have " + std::to_string(w.size()) + " entries, moments " +
                               std::to_string(f.size()));
  }
}

double region_area(const map::Region& r) {
  if (r.visited() && r.observed.size() >= 3) return geo::area(r.observed);
  return geo::kPi * r.radius * r.radius;
}

}  // namespace

const char* feature_name(int f) {
  static const char* names[] = {"path-length", "heading-change", "displacement", "landmark-area",
                                "start-distance", "end-distance", "distance-change", "bearing",
                                "absent", "stop", "at-goal-type", "explore"};
  return f >= 0 && f < kFeatureDim ? names[f] : "?";
}

std::vector<Action> enumerate_actions(const RobotState& s) {
  const auto& g = *s.graph;
  std::vector<int> targets = g.visited;
  targets.insert(targets.end(), g.frontiers.begin(), g.frontiers.end());
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  std::vector<double> dist;
  std::vector<int> prev;
  g.shortest(s.node, dist, prev);
  std::vector<Action> out;
  for (int t : targets) {
    if (t == s.node || !std::isfinite(dist[t])) continue;
    Action a;
    a.target = t;
    for (int n = t; n != s.node; n = prev[n]) a.path.push_back(n);
    a.path.push_back(s.node);
    std::reverse(a.path.begin(), a.path.end());
    out.push_back(std::move(a));
  }
  Action stop;
  stop.stop = true;
  stop.path = {s.node};
  out.push_back(stop);
  return out;
}

namespace {

int best_candidate(const map::Particle& p, const std::vector<const map::Region*>& cands, const Goal& goal,
                   const Pose2& robot, const rel::RelationModels& models) {
  if (cands.empty()) return -1;
  if (goal.relation >= 0 && goal.landmark_type >= 0) {
    int best = -1;
    double best_score = -kInf;
    for (const auto* c : cands) {
      for (const auto& l : p.regions) {
        if (l.type != goal.landmark_type || l.id == c->id) continue;
        const double s = models.score(goal.relation, rbpf::region_geom(*c), rbpf::region_geom(l), robot);
        if (s > best_score) {
          best_score = s;
          best = c->id;
        }
      }
    }
    if (best >= 0) return best;
  }
  const map::Region* nearest = cands.front();
  for (const auto* c : cands) {
    if ((c->center - robot.t()).norm() < (nearest->center - robot.t()).norm()) nearest = c;
  }
  return nearest->id;
}

}  // namespace

int select_landmark(const map::Particle& p, const Goal& goal, const Pose2& robot, const rel::RelationModels& models) {
  if (goal.type < 0) return -1;
  for (bool visited : {true, false}) {
    for (bool relational : {true, false}) {
      for (auto it = p.bindings.rbegin(); it != p.bindings.rend(); ++it) {
        if ((it->landmark >= 0) != relational) continue;
        const auto* r = p.region(it->figure);
        if (r && r->type == goal.type && r->visited() == visited) return r->id;
      }
    }
    std::vector<const map::Region*> cands;
    for (const auto& r : p.regions) {
      if (r.type == goal.type && r.visited() == visited) cands.push_back(&r);
    }
    const int best = best_candidate(p, cands, goal, robot, models);
    if (best >= 0) return best;
  }
  return -1;
}

LandmarkView landmark_view(const map::Particle& p, const Goal& goal, const Pose2& robot,
                           const rel::RelationModels& models) {
  LandmarkView v;
  const auto* cur = p.region(p.current_region);
  v.at_goal_type = cur && goal.type >= 0 && cur->type == goal.type;
  const int id = select_landmark(p, goal, robot, models);
  if (id < 0) return v;
  const auto& r = *p.region(id);
  v.present = true;
  v.visited = r.visited();
  v.center = r.center;
  v.area = region_area(r);
  return v;
}

TravelMetric::TravelMetric(const sim::NavGraph& g) : g_(&g), dist_(g.pos.size()) {
  std::vector<int> prev;
  for (int n : g.visited) g.shortest(n, dist_[n], prev);
  for (int n : g.frontiers) g.shortest(n, dist_[n], prev);
}

double TravelMetric::distance(int node, const LandmarkView& lm) const {
  const auto& from = dist_.at(node);
  if (from.empty()) throw std::invalid_argument("travel distance from an unknown node");
  const auto& g = *g_;
  if (lm.visited && !g.visited.empty()) {
    int best = g.visited.front();
    for (int v : g.visited) {
      if ((g.pos[v] - lm.center).norm() < (g.pos[best] - lm.center).norm()) best = v;
    }
    return from[best] + (g.pos[best] - lm.center).norm();
  }
  double best = kInf;
  for (int f : g.frontiers) best = std::min(best, from[f] + (g.pos[f] - lm.center).norm());
  return std::isfinite(best) ? best : (g.pos[node] - lm.center).norm();
}

VectorXd features(const Action& a, const std::vector<Vec2>& poly, bool frontier, const LandmarkView& lm,
                  std::optional<std::pair<double, double>> travel) {
  VectorXd f = VectorXd::Zero(kFeatureDim);
  if (a.stop) {
    f[kStop] = 1.0;
    f[kAtGoalType] = lm.at_goal_type ? 1.0 : 0.0;
    return f;
  }
  double length = 0.0, turn = 0.0;
  bool have_heading = false;
  double heading = 0.0;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const Vec2 d = poly[i] - poly[i - 1];
    const double l = d.norm();
    length += l;
    if (l < 1e-9) continue;
    const double h = std::atan2(d.y(), d.x());
    if (have_heading) turn += std::abs(geo::wrap_angle(h - heading));
    heading = h;
    have_heading = true;
  }
  const Vec2 start = poly.front(), end = poly.back();
  f[kPathLength] = length;
  f[kHeadingChange] = turn;
  f[kDisplacement] = (end - start).norm();
  f[kExplore] = frontier ? 1.0 : 0.0;
  if (!lm.present) {
    f[kAbsent] = 1.0;
    return f;
  }
  f[kLandmarkArea] = lm.area;
  f[kStartDistance] = travel ? travel->first : (lm.center - start).norm();
  f[kEndDistance] = travel ? travel->second : (lm.center - end).norm();
  f[kDistanceChange] = f[kEndDistance] - f[kStartDistance];
  const Vec2 move = end - start, toward = lm.center - start;
  f[kBearing] = move.norm() > 1e-9 && toward.norm() > 1e-9 ? move.dot(toward) / (move.norm() * toward.norm()) : 0.0;
  return f;
}

VectorXd features(const RobotState& s, const Action& a, const LandmarkView& lm) {
  if (a.stop) return features(a, {s.graph->pos[s.node]}, false, lm);
  const TravelMetric m(*s.graph);
  const std::pair<double, double> travel{m.distance(s.node, lm), m.distance(a.target, lm)};
  return features(a, s.graph->polyline(a.path), s.graph->is_frontier(a.target), lm,
                  lm.present ? std::optional(travel) : std::nullopt);
}

VectorXd moments(const std::vector<VectorXd>& phi, const std::vector<double>& weights, int k) {
  if (phi.empty() || phi.size() != weights.size()) throw std::invalid_argument("moments need one weight per feature vector");
  if (k < 1) throw std::invalid_argument("moment order must be >= 1");
  const Eigen::Index d = phi.front().size();
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("moment weights sum to zero");
  VectorXd out = VectorXd::Zero(k * d);
  VectorXd mean = VectorXd::Zero(d);
  for (std::size_t i = 0; i < phi.size(); ++i) mean += (weights[i] / total) * phi[i];
  out.head(d) = mean;
  for (int j = 2; j <= k; ++j) {
    VectorXd m = VectorXd::Zero(d);
    for (std::size_t i = 0; i < phi.size(); ++i) {
      m += (weights[i] / total) * (phi[i] - mean).array().pow(j).matrix();
    }
    out.segment((j - 1) * d, d) = m;
  }
  return out;
}

PolicyWeights PolicyWeights::zeros(int k, int d) {
  PolicyWeights w;
  w.k = k;
  w.d = d;
  w.w = VectorXd::Zero(k * d);
  return w;
}

const char* PolicyWeights::schema() {
  static const std::string s = [] {
    std::string out = "policy-features/1:";
    for (int f = 0; f < kFeatureDim; ++f) out += std::string(f ? "," : "") + feature_name(f);
    return out;
  }();
  return s.c_str();
}

std::string PolicyWeights::to_json() const {
  nlohmann::json j;
  j["schema"] = schema();
  j["k"] = k;
  j["d"] = d;
  j["w"] = std::vector<double>(w.data(), w.data() + w.size());
  j["lambda"] = lambda;
  j["alpha0"] = alpha0;
  j["gamma"] = gamma;
  return j.dump(1);
}

PolicyWeights PolicyWeights::from_json_text(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("schema", std::string()) != schema()) throw PolicyDimensionError("policy weights use another feature schema");
  PolicyWeights out;
  out.k = j.at("k").get<int>();
  out.d = j.at("d").get<int>();
  const auto v = j.at("w").get<std::vector<double>>();
  if (static_cast<int>(v.size()) != out.k * out.d) throw PolicyDimensionError("policy weight vector has the wrong length");
  out.w = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  out.lambda = j.value("lambda", 1e-3);
  out.alpha0 = j.value("alpha0", 0.5);
  out.gamma = j.value("gamma", 0.5);
  return out;
}

PolicyWeights PolicyWeights::load(const std::string& path) { return from_json_text(read_file(path)); }

void PolicyWeights::save(const std::string& path) const { write_file(path, to_json()); }

double cost(const VectorXd& w, const VectorXd& f) {
  require_dim(w, f);
  return w.dot(f);
}

int argmin_cost(const VectorXd& w, const std::vector<VectorXd>& m) {
  int best = -1;
  double best_cost = kInf;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double c = cost(w, m[i]);
    if (best < 0 || c < best_cost) {
      best = static_cast<int>(i);
      best_cost = c;
    }
  }
  return best;
}

std::vector<VectorXd> embed_actions(const RobotState& s, const std::vector<Action>& actions,
                                    const map::SemanticMapBelief& belief, const Goal& goal,
                                    const rel::RelationModels& models, int k) {
  std::vector<std::vector<Vec2>> polys;
  std::vector<bool> frontier;
  for (const auto& a : actions) {
    polys.push_back(a.stop ? std::vector<Vec2>{s.graph->pos[s.node]} : s.graph->polyline(a.path));
    frontier.push_back(!a.stop && s.graph->is_frontier(a.target));
  }
  std::vector<LandmarkView> views;
  for (const auto& p : belief.particles) views.push_back(landmark_view(p, goal, s.pose, models));
  const auto weights = belief.weights();
  const TravelMetric metric(*s.graph);
  std::vector<double> start;
  for (const auto& v : views) start.push_back(v.present ? metric.distance(s.node, v) : 0.0);
  std::vector<VectorXd> out;
  for (std::size_t a = 0; a < actions.size(); ++a) {
    std::vector<VectorXd> phi;
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      std::optional<std::pair<double, double>> travel;
      if (v.present && !actions[a].stop) travel = std::pair{start[i], metric.distance(actions[a].target, v)};
      phi.push_back(features(actions[a], polys[a], frontier[a], v, travel));
    }
    out.push_back(moments(phi, weights, k));
  }
  return out;
}

int select_action(const PolicyWeights& w, const std::vector<VectorXd>& m) { return argmin_cost(w.w, m); }

namespace {

/// Loss-augmented argmin; ties prefer the expert, then the lowest index.
int augmented_argmin(const VectorXd& w, const Decision& d, double* value) {
  if (d.expert < 0 || d.expert >= static_cast<int>(d.moments.size())) {
    throw std::invalid_argument("expert action is not in the action set");
  }
  int best = d.expert;
  double best_v = cost(w, d.moments[d.expert]);
  for (std::size_t i = 0; i < d.moments.size(); ++i) {
    if (static_cast<int>(i) == d.expert) continue;
    const double v = cost(w, d.moments[i]) - 1.0;
    if (v < best_v) {
      best_v = v;
      best = static_cast<int>(i);
    }
  }
  if (value) *value = best_v;
  return best;
}

}  // namespace

double hinge_loss(const VectorXd& w, const Decision& d, double lambda) {
  double m = 0.0;
  augmented_argmin(w, d, &m);
  return 0.5 * lambda * w.squaredNorm() + cost(w, d.moments[d.expert]) - m;
}

VectorXd subgradient(const VectorXd& w, const Decision& d, double lambda) {
  const int a = augmented_argmin(w, d, nullptr);
  return lambda * w + d.moments[d.expert] - d.moments[a];
}

double learning_rate(double alpha0, double gamma, long t) {
  if (t < 1) throw std::invalid_argument("learning-rate step must be >= 1");
  return alpha0 / std::pow(static_cast<double>(t), gamma);
}

VectorXd update_weights(const VectorXd& w, const VectorXd& g, long t, double alpha0, double gamma) {
  return w - learning_rate(alpha0, gamma, t) * g;
}

int expert_action(const sim::WorldSpec& world, const RobotState& s, const std::vector<Action>& actions,
                  int current_region, int goal_region) {
  if (current_region == goal_region) {
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (actions[i].stop) return static_cast<int>(i);
    }
  }
  const auto dist = world.distances_to(goal_region);
  const auto& g = *s.graph;
  int best = -1;
  double best_d = kInf;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto& a = actions[i];
    if (a.stop) continue;
    int end = a.target;
    if (world.is_door(end)) {
      const auto& door = world.doorways[world.door_of(end)];
      const bool a_known = std::count(g.visited.begin(), g.visited.end(), door.a) > 0;
      end = a_known ? door.b : door.a;
    }
    if (dist[end] < best_d) {
      best_d = dist[end];
      best = static_cast<int>(i);
    }
  }
  if (best < 0) throw UnreachableGoalError("goal region " + std::to_string(goal_region) + " is unreachable");
  return best;
}

void train_epochs(PolicyWeights& w, const std::vector<Decision>& data, int epochs, long& t, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const VectorXd g = subgradient(w.w, data[i], w.lambda);
      w.w = update_weights(w.w, g, t++, w.alpha0, w.gamma);
    }
  }
}

VectorXd moment_scale(const std::vector<Decision>& data, Eigen::Index dim) {
  VectorXd sq = VectorXd::Zero(dim);
  double n = 0.0;
  for (const auto& d : data) {
    for (const auto& m : d.moments) {
      sq += m.cwiseAbs2();
      n += 1.0;
    }
  }
  VectorXd s = VectorXd::Ones(dim);
  if (n == 0.0) return s;
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double rms = std::sqrt(sq[j] / n);
    if (rms > 1e-9) s[j] = rms;
  }
  return s;
}

DaggerResult dagger_train(const std::vector<RolloutFactory>& scenarios, const DaggerConfig& cfg, std::uint64_t seed,
                          const std::function<void(const IterationStats&)>& progress) {
  if (scenarios.empty()) throw std::invalid_argument("dagger needs at least one scenario");
  DaggerResult out;
  out.weights = PolicyWeights::zeros(cfg.k, cfg.d);
  out.weights.lambda = cfg.lambda;
  out.weights.alpha0 = cfg.alpha0;
  out.weights.gamma = cfg.gamma;
  std::vector<Decision> data;
  Rng rng = stream_rng(seed, 0x5eed);
  long t = 1;
  for (int it = 0; it < cfg.iterations; ++it) {
    int agree = 0, total = 0;
    for (const auto& make : scenarios) {
      auto roll = make(it);
      for (int n = 0; n < cfg.max_decisions; ++n) {
        Decision d = roll->observe();
        const int pick = argmin_cost(out.weights.w, d.moments);
        agree += pick == d.expert;
        ++total;
        const int exec = it == 0 ? d.expert : pick;
        data.push_back(std::move(d));
        if (roll->act(exec)) break;
      }
    }
    // Passes run on moments divided by their RMS; w = u / scale keeps costs identical.
    const VectorXd scale = moment_scale(data, out.weights.w.size());
    std::vector<Decision> scaled = data;
    for (auto& d : scaled) {
      for (auto& m : d.moments) m = m.cwiseQuotient(scale);
    }
    PolicyWeights u = out.weights;
    u.w = out.weights.w.cwiseProduct(scale);
    train_epochs(u, scaled, cfg.epochs, t, rng);
    out.weights.w = u.w.cwiseQuotient(scale);
    IterationStats st;
    st.iteration = it;
    st.agreement = total ? static_cast<double>(agree) / total : 0.0;
    int ok = 0;
    double loss = 0.0;
    for (const auto& d : data) {
      ok += argmin_cost(out.weights.w, d.moments) == d.expert;
      loss += hinge_loss(out.weights.w, d, out.weights.lambda);
    }
    st.dataset = data.size();
    st.dataset_agreement = data.empty() ? 0.0 : static_cast<double>(ok) / data.size();
    st.mean_loss = data.empty() ? 0.0 : loss / data.size();
    out.curve.push_back(st);
    if (progress) progress(st);
  }
  return out;
}

}  // namespace wayfinder::policy
