#include "wayfinder/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "wayfinder/langparse.hpp"

namespace wayfinder::harness {

namespace {

using Clock = std::chrono::steady_clock;

const ground::SymbolSpace& space() { return ground::SymbolSpace::bundled(); }
std::size_t n_types() { return space().object_types.size(); }

lang::ParseTree parse_text(const std::string& text) {
  return lang::parse(lang::tokenize(text), lang::Grammar::bundled());
}

nlohmann::json pose_json(const Pose2& p) { return {{"x", p.x}, {"y", p.y}, {"theta", p.theta}}; }

nlohmann::json point_json(const Vec2& v) { return {v.x(), v.y()}; }

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

const char* baseline_name(Baseline b) {
  switch (b) {
    case Baseline::KnownMap:
      return "known-map";
    case Baseline::WithLanguage:
      return "with-language";
    case Baseline::WithoutLanguage:
      return "without-language";
  }
  return "?";
}

Baseline parse_baseline(std::string_view name) {
  for (Baseline b : all_baselines()) {
    if (name == baseline_name(b)) return b;
  }
  throw std::invalid_argument("unknown baseline " + std::string(name));
}

const std::vector<Baseline>& all_baselines() {
  static const std::vector<Baseline> v = {Baseline::KnownMap, Baseline::WithLanguage, Baseline::WithoutLanguage};
  return v;
}

std::vector<Direction> load_directions(const std::string& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  std::vector<Direction> out;
  for (const auto& d : j.at("directions")) {
    out.push_back({d.at("text").get<std::string>(), d.at("world").get<std::string>(), d.at("start_region").get<int>(),
                   d.at("goal_region").get<int>()});
  }
  return out;
}

const std::vector<Direction>& bundled_directions() {
  static const auto d = load_directions(data_path("directions.json"));
  return d;
}

const sim::WorldSpec& world_named(const std::string& name) {
  static std::mutex mu;
  static std::map<std::string, sim::WorldSpec> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(name);
  if (it == cache.end()) it = cache.emplace(name, sim::WorldSpec::bundled(name)).first;
  return it->second;
}

policy::Goal goal_from_annotations(const std::vector<ground::Symbol>& roots) {
  policy::Goal g;
  for (const auto& s : roots) {
    if (s.cls == ground::SymbolClass::TypedRelation) return {s.figure, s.relation, s.landmark};
  }
  for (const auto& s : roots) {
    if (s.cls == ground::SymbolClass::Object) return {s.figure, -1, -1};
  }
  return g;
}

std::vector<rbpf::Annotation> to_annotations(const std::vector<ground::Symbol>& roots) {
  std::vector<rbpf::Annotation> out;
  for (const auto& s : roots) {
    if (s.cls == ground::SymbolClass::TypedRelation) out.push_back({s.figure, s.relation, s.landmark});
  }
  for (const auto& s : roots) {
    if (s.cls == ground::SymbolClass::Object) out.push_back({s.figure, -1, -1});
  }
  return out;
}

// ---- session ----

namespace {

rbpf::FilterContext filter_context(const RunConfig& cfg, Baseline b) {
  rbpf::FilterContext ctx;
  ctx.relations = &rel::RelationModels::bundled();
  ctx.n_types = n_types();
  ctx.config = cfg.filter;
  ctx.config.particles = cfg.particles;
  ctx.config.language = b != Baseline::WithoutLanguage;
  return ctx;
}

rbpf::AppearanceObservation to_obs(const sim::Appearance& z) { return {z.type, z.transition, z.extent_local}; }

}  // namespace

Session::Session(const sim::WorldSpec& world, const Direction& dir, Baseline baseline, const RunConfig& cfg,
                 std::uint64_t seed)
    : world_(world),
      dir_(dir),
      baseline_(baseline),
      cfg_(cfg),
      seed_(seed),
      rng_(stream_rng(seed, 0x51)),
      filter_(filter_context(cfg, baseline), mix64(seed ^ 0xf11)) {
  const int nr = static_cast<int>(world_.regions.size());
  if (dir.start_region < 0 || dir.start_region >= nr || dir.goal_region < 0 || dir.goal_region >= nr) {
    throw std::invalid_argument("direction start or goal is not a region of " + world_.name);
  }
  const auto t0 = Clock::now();
  const Vec2 c = world_.regions[dir.start_region].rect.center();
  double heading = world_.start_heading;
  const auto doors = world_.doors_of(dir.start_region);
  if (dir.start_region != world_.start_region && !doors.empty()) {
    const Vec2 d = world_.doorways[doors.front()].midpoint - c;
    heading = std::atan2(d.y(), d.x());
  }
  frame_ = {c.x(), c.y(), heading};
  truth_ = {frame_, dir.start_region};
  visited_ = {dir.start_region};
  const double shortest = world_.shortest_path_length(dir.start_region, dir.goal_region);
  cap_ = static_cast<int>(std::ceil(cfg.step_cap_factor * std::max(1.0, std::ceil(shortest / cfg.sensor.quantum))));

  record_.world = world_.name;
  record_.text = dir.text;
  record_.baseline = baseline;
  record_.seed = seed;
  record_.start_region = dir.start_region;
  record_.goal_region = dir.goal_region;

  if (!dir.text.empty()) roots_ = ground::ground_annotations(parse_text(dir.text), space(), ground::default_weights());
  goal_ = goal_from_annotations(roots_);
  if (baseline != Baseline::WithoutLanguage) pending_ = to_annotations(roots_);

  const auto z0 = to_obs(sim::observe(world_, truth_, n_types(), cfg.sensor, rng_, false));
  if (baseline != Baseline::KnownMap) {
    if (cfg.keep_filter_trace) filter_.trace = [this](const std::string& l) { record_.filter_trace.push_back(l); };
    filter_.start(z0);
    rbpf::StepInput in;
    in.odometry = {0, 0, 0};
    in.z = z0;
    in.alpha.annotations = pending_;
    pending_.clear();
    filter_.step(in);
  }
  refresh_goal();
  record_.wall_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

map::Particle Session::true_map_particle() const {
  const Pose2 inv = geo::inverse(frame_);
  const auto& r0 = world_.regions[0];
  auto p = map::Particle::initial(0, r0.type_index, n_types(), geo::transform(inv, r0.rect.polygon()));
  for (std::size_t i = 1; i < world_.regions.size(); ++i) {
    p.add_region(world_.regions[i].type_index, map::RegionStatus::Visited, n_types());
  }
  for (auto& reg : p.regions) {
    reg.observed = geo::transform(inv, world_.regions[reg.id].rect.polygon());
    reg.center = geo::centroid(reg.observed);
    reg.radius = geo::circumradius(reg.observed);
  }
  p.current_region = truth_.region;
  return p;
}

map::SemanticMapBelief Session::policy_belief() const {
  map::SemanticMapBelief b;
  if (baseline_ == Baseline::KnownMap) {
    b.particles.push_back(true_map_particle());
    return b;
  }
  if (cfg_.belief) return filter_.belief();
  b.particles.push_back(map::map_estimate(filter_.belief()));
  b.particles.back().log_weight = 0.0;
  return b;
}

void Session::refresh_goal() {
  if (dir_.text.empty()) return;
  const auto belief = policy_belief();
  const auto& p = map::map_estimate(belief);
  ground::MapContext ctx;
  for (const auto& r : p.regions) ctx.objects.push_back({static_cast<int>(ctx.objects.size()), r.type});
  const Pose2 robot = baseline_ == Baseline::KnownMap ? Pose2{} : p.pose();
  const auto models = &rel::RelationModels::bundled();
  ctx.relation_support = [&p, robot, models](int f, int r, int l) {
    return std::exp(models->score(r, rbpf::region_geom(p.regions[f]), rbpf::region_geom(p.regions[l]), robot));
  };
  const auto b = ground::ground_behavior(parse_text(dir_.text), space(), ctx, ground::default_weights());
  record_.behavior = ground::describe(space(), ctx, b);
  if (goal_.type < 0 && b.goal >= 0) goal_.type = ctx.objects[b.goal].type;
}

policy::Decision Session::observe() {
  if (done_) throw std::logic_error("episode is over");
  graph_ = baseline_ == Baseline::KnownMap ? sim::full_graph(world_, frame_) : sim::known_graph(world_, visited_, frame_);
  const auto belief = policy_belief();
  policy::RobotState s;
  s.pose = baseline_ == Baseline::KnownMap ? geo::compose(geo::inverse(frame_), truth_.pose)
                                           : map::map_estimate(belief).pose();
  s.node = truth_.region;
  s.graph = &graph_;
  actions_ = policy::enumerate_actions(s);
  policy::Decision d;
  d.moments = policy::embed_actions(s, actions_, belief, goal_, rel::RelationModels::bundled(), cfg_.k);
  d.expert = policy::expert_action(world_, s, actions_, truth_.region, dir_.goal_region);
  observed_ = true;
  return d;
}

bool Session::act(int index) {
  if (done_) throw std::logic_error("episode is over");
  if (!observed_) throw std::logic_error("act() needs a preceding observe()");
  observed_ = false;
  const auto t0 = Clock::now();
  const policy::Action a = actions_.at(index);
  last_choice_ = index;
  record_.decisions += 1;
  StepRecord r;
  r.decision = record_.decisions;
  r.target = a.target;
  r.stop = a.stop;
  if (a.stop) {
    record_.stopped = true;
  } else {
    const auto res = sim::step_robot(world_, truth_, a.path, n_types(), cfg_.sensor, rng_);
    record_.distance += res.distance;
    record_.steps += res.quanta;
    truth_ = res.truth;
    if (std::find(visited_.begin(), visited_.end(), truth_.region) == visited_.end()) visited_.push_back(truth_.region);
    if (baseline_ != Baseline::KnownMap) {
      rbpf::StepInput in;
      in.odometry = res.odometry;
      in.odometry_cov = res.odometry_cov;
      in.z = to_obs(res.z);
      in.alpha.annotations = pending_;
      pending_.clear();
      filter_.step(in);
    }
  }
  r.pose = truth_.pose;
  r.region = truth_.region;
  r.distance = record_.distance;
  r.steps = record_.steps;
  if (baseline_ != Baseline::KnownMap) {
    for (const auto& reg : map::map_estimate(filter_.belief()).regions) r.hypothesized += !reg.visited();
  }
  record_.trace.push_back(r);
  record_.wall_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  if (record_.stopped) {
    finish();
  } else if (record_.steps >= cap_ || record_.decisions >= cfg_.max_decisions) {
    record_.capped = true;
    finish();
  }
  return done_;
}

void Session::finish() {
  done_ = true;
  const Vec2 goal = world_.regions[dir_.goal_region].rect.center();
  record_.end_error = (truth_.pose.t() - goal).norm();
  record_.success = record_.stopped && truth_.region == dir_.goal_region;
}

bool Session::step(const policy::PolicyWeights& w) {
  const auto t0 = Clock::now();
  const auto d = observe();
  const int pick = policy::select_action(w, d.moments);
  record_.wall_ms += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  const bool over = act(pick);
  record_.trace.back().expert = d.expert;
  return over;
}

std::vector<ground::Symbol> Session::command(const std::string& text) {
  auto roots = ground::ground_annotations(parse_text(text), space(), ground::default_weights());
  const auto g = goal_from_annotations(roots);
  if (g.type >= 0) goal_ = g;
  if (baseline_ != Baseline::WithoutLanguage) {
    const auto a = to_annotations(roots);
    pending_.insert(pending_.end(), a.begin(), a.end());
  }
  return roots;
}

std::string Session::snapshot_json() const {
  nlohmann::json j;
  j["world"] = world_.name;
  j["text"] = dir_.text;
  j["baseline"] = baseline_name(baseline_);
  j["step"] = record_.decisions;
  j["t"] = filter_.belief().t;
  j["robot"] = pose_json(truth_.pose);
  j["region"] = truth_.region;
  j["done"] = done_;
  j["goal"] = {{"type", goal_.type >= 0 ? space().object_types[goal_.type].name : ""},
               {"relation", goal_.relation >= 0 ? space().relations[goal_.relation].name : ""},
               {"landmark", goal_.landmark_type >= 0 ? space().object_types[goal_.landmark_type].name : ""}};
  nlohmann::json action = nullptr;
  if (last_choice_ >= 0 && last_choice_ < static_cast<int>(actions_.size())) {
    const auto& a = actions_[last_choice_];
    action = {{"stop", a.stop}, {"target", a.target}, {"path", a.path}};
  }
  j["action"] = action;
  auto trail = nlohmann::json::array();
  trail.push_back(point_json(frame_.t()));
  for (const auto& s : record_.trace) trail.push_back(point_json(s.pose.t()));
  j["trace"] = trail;
  j["metrics"] = {{"distance", record_.distance}, {"steps", record_.steps},     {"decisions", record_.decisions},
                  {"stopped", record_.stopped},   {"success", record_.success}, {"capped", record_.capped}};
  auto particles = nlohmann::json::array();
  const auto belief = policy_belief();
  for (const auto& p : belief.particles) {
    nlohmann::json pj;
    pj["id"] = p.id;
    pj["weight"] = std::exp(p.log_weight);
    auto regions = nlohmann::json::array();
    for (const auto& r : p.regions) {
      nlohmann::json rj;
      rj["id"] = r.id;
      rj["type"] = space().object_types.at(r.type).name;
      rj["status"] = r.visited() ? "visited" : "hypothesized";
      rj["center"] = point_json(geo::transform(frame_, r.center));
      rj["radius"] = r.radius;
      auto poly = nlohmann::json::array();
      for (const auto& v : r.observed) poly.push_back(point_json(geo::transform(frame_, v)));
      rj["extent"] = poly;
      regions.push_back(rj);
    }
    pj["regions"] = regions;
    particles.push_back(pj);
  }
  j["particles"] = particles;
  return j.dump();
}

RunRecord run_scenario(const Direction& dir, Baseline baseline, const policy::PolicyWeights& w, const RunConfig& cfg,
                       std::uint64_t seed) {
  Session s(world_named(dir.world), dir, baseline, cfg, seed);
  while (!s.step(w)) {
  }
  return s.record();
}

// ---- training ----

policy::DaggerResult train_policy(const std::vector<Direction>& train, const PolicyTrainConfig& cfg, std::uint64_t seed,
                                  const std::function<void(const policy::IterationStats&)>& progress) {
  std::vector<policy::RolloutFactory> factories;
  RunConfig run = cfg.run;
  run.max_decisions = cfg.max_decisions;
  run.k = cfg.dagger.k;
  std::uint64_t idx = 0;
  for (const auto& d : train) {
    for (Baseline b : cfg.baselines) {
      for (int k = 0; k < cfg.seeds_per_direction; ++k, ++idx) {
        factories.push_back([d, b, run, seed, idx](int it) -> std::unique_ptr<policy::Rollout> {
          const std::uint64_t s = mix64(mix64(seed ^ idx) + static_cast<std::uint64_t>(it));
          return std::make_unique<Session>(world_named(d.world), d, b, run, s);
        });
      }
    }
  }
  policy::DaggerConfig dc = cfg.dagger;
  dc.max_decisions = cfg.max_decisions;
  return policy::dagger_train(factories, dc, seed, progress);
}

const policy::PolicyWeights& default_policy() {
  static const auto w = policy::PolicyWeights::load(data_path("policy_weights.json"));
  return w;
}

// ---- evaluation ----

const char* const kSummaryHeader =
    "baseline,runs,distance_mean,distance_std,steps_mean,steps_std,success_rate,end_error_mean,wall_ms_mean";
const char* const kRunsHeader =
    "world,start_region,goal_region,baseline,seed,distance,steps,decisions,end_error,stopped,capped,success,wall_ms,text";
const char* const kXvalHeader = "trial,train_n,held_out_n,belief_error,no_belief_error";

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() == 1) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

Evaluation evaluate(const std::vector<Direction>& dirs, const std::vector<Baseline>& baselines,
                    const std::vector<std::uint64_t>& seeds, const policy::PolicyWeights& w, const RunConfig& cfg) {
  Evaluation e;
  for (Baseline b : baselines) {
    std::vector<double> dist, steps, err, wall;
    int ok = 0;
    for (const auto& d : dirs) {
      for (auto s : seeds) {
        auto r = run_scenario(d, b, w, cfg, s);
        dist.push_back(r.distance);
        steps.push_back(r.steps);
        err.push_back(r.end_error);
        wall.push_back(r.wall_ms);
        ok += r.success;
        e.runs.push_back(std::move(r));
      }
    }
    BaselineSummary s;
    s.baseline = b;
    s.runs = static_cast<int>(dist.size());
    std::tie(s.distance_mean, s.distance_std) = mean_std(dist);
    std::tie(s.steps_mean, s.steps_std) = mean_std(steps);
    s.end_error_mean = mean_std(err).first;
    s.wall_ms_mean = mean_std(wall).first;
    s.success_rate = s.runs ? static_cast<double>(ok) / s.runs : 0.0;
    e.summary.push_back(s);
  }
  return e;
}

std::string summary_csv(const Evaluation& e) {
  std::ostringstream out;
  out << kSummaryHeader << "\n";
  for (const auto& s : e.summary) {
    out << baseline_name(s.baseline) << "," << s.runs << "," << fixed(s.distance_mean) << "," << fixed(s.distance_std)
        << "," << fixed(s.steps_mean) << "," << fixed(s.steps_std) << "," << fixed(s.success_rate) << ","
        << fixed(s.end_error_mean) << "," << fixed(s.wall_ms_mean) << "\n";
  }
  return out.str();
}

std::string runs_csv(const Evaluation& e) {
  std::ostringstream out;
  out << kRunsHeader << "\n";
  for (const auto& r : e.runs) {
    out << r.world << "," << r.start_region << "," << r.goal_region << "," << baseline_name(r.baseline) << ","
        << r.seed << "," << fixed(r.distance) << "," << r.steps << "," << r.decisions << "," << fixed(r.end_error)
        << "," << r.stopped << "," << r.capped << "," << r.success << "," << fixed(r.wall_ms) << ","
        << csv_quote(r.text) << "\n";
  }
  return out.str();
}

// ---- cross validation ----

std::vector<XvalTrial> cross_validate(const std::vector<Direction>& corpus, const XvalConfig& cfg, std::uint64_t seed,
                                      const std::function<void(const XvalTrial&)>& progress) {
  const int n = static_cast<int>(corpus.size());
  if (cfg.train_n <= 0 || cfg.train_n >= n) throw std::invalid_argument("train_n must leave a held-out set");
  std::vector<XvalTrial> out;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    XvalTrial x;
    x.trial = trial;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = stream_rng(seed, 0x7a1, static_cast<std::uint64_t>(trial));
    std::shuffle(perm.begin(), perm.end(), rng);
    x.train.assign(perm.begin(), perm.begin() + cfg.train_n);
    x.held_out.assign(perm.begin() + cfg.train_n, perm.end());
    std::sort(x.train.begin(), x.train.end());
    std::sort(x.held_out.begin(), x.held_out.end());
    std::vector<Direction> train;
    for (int i : x.train) train.push_back(corpus[i]);

    for (bool belief : {true, false}) {
      PolicyTrainConfig tc = cfg.train;
      tc.dagger.k = belief ? 2 : 1;
      tc.run = cfg.run;
      tc.run.belief = belief;
      const std::uint64_t ts = mix64(seed ^ (static_cast<std::uint64_t>(trial) << 1 | belief));
      const auto w = train_policy(train, tc, ts).weights;
      RunConfig rc = cfg.run;
      rc.belief = belief;
      rc.k = tc.dagger.k;
      std::vector<double> errs;
      for (int i : x.held_out) {
        const std::uint64_t s = mix64(mix64(seed + static_cast<std::uint64_t>(trial)) ^ static_cast<std::uint64_t>(i));
        errs.push_back(run_scenario(corpus[i], Baseline::WithLanguage, w, rc, s).end_error);
      }
      (belief ? x.belief_error : x.no_belief_error) = mean_std(errs).first;
    }
    if (progress) progress(x);
    out.push_back(std::move(x));
  }
  return out;
}

Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("quartiles of an empty sample");
  std::sort(v.begin(), v.end());
  const auto at = [&v](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

std::string xval_csv(const std::vector<XvalTrial>& trials) {
  std::ostringstream out;
  out << kXvalHeader << "\n";
  for (const auto& t : trials) {
    out << t.trial << "," << t.train.size() << "," << t.held_out.size() << "," << fixed(t.belief_error) << ","
        << fixed(t.no_belief_error) << "\n";
  }
  return out.str();
}

}  // namespace wayfinder::harness
