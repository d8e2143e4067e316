#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wayfinder/grounding.hpp"
#include "wayfinder/policy.hpp"
#include "wayfinder/rbpf.hpp"
#include "wayfinder/sim.hpp"

namespace wayfinder::harness {

using geo::Pose2;
using geo::Vec2;

enum class Baseline : int { KnownMap = 0, WithLanguage, WithoutLanguage };

const char* baseline_name(Baseline b);
Baseline parse_baseline(std::string_view name);
const std::vector<Baseline>& all_baselines();

struct Direction {
  std::string text;
  std::string world;
  int start_region = 0;
  int goal_region = 0;
};

std::vector<Direction> load_directions(const std::string& path);
const std::vector<Direction>& bundled_directions();

/// Bundled world by name, loaded once.
const sim::WorldSpec& world_named(const std::string& name);

struct RunConfig {
  int particles = 20;
  int k = 2;
  bool belief = true;  ///< false: policy sees only the MAP particle
  double step_cap_factor = 40.0;
  int max_decisions = 200;
  sim::SensorConfig sensor;
  rbpf::FilterConfig filter;
  bool keep_filter_trace = false;
};

struct StepRecord {
  int decision = 0;
  Pose2 pose;  ///< world frame, after the action
  int region = 0;
  int target = -1;
  bool stop = false;
  int expert = -1;
  double distance = 0.0;
  int steps = 0;
  int hypothesized = 0;  ///< hypothesized regions in the MAP particle
};

struct RunRecord {
  std::string world;
  std::string text;
  Baseline baseline = Baseline::WithLanguage;
  int start_region = 0;
  int goal_region = 0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> trace;
  std::vector<std::string> filter_trace;
  double distance = 0.0;    ///< meters traveled
  int steps = 0;            ///< motion quanta
  int decisions = 0;
  double end_error = 0.0;   ///< robot to goal-region center at the end (m)
  bool stopped = false;
  bool capped = false;
  bool success = false;     ///< stopped inside the goal region
  double wall_ms = 0.0;
  std::string behavior;     ///< grounded behavior on the MAP map at the start
};

/// Language-derived goal: typed root annotation first, then an object root.
policy::Goal goal_from_annotations(const std::vector<ground::Symbol>& roots);
std::vector<rbpf::Annotation> to_annotations(const std::vector<ground::Symbol>& roots);

/// One episode: perceive → ground → filter step → select action.
class Session : public policy::Rollout {
 public:
  Session(const sim::WorldSpec& world, const Direction& dir, Baseline baseline, const RunConfig& cfg,
          std::uint64_t seed);
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  policy::Decision observe() override;
  bool act(int index) override;

  /// Chooses with `w` and executes; returns true when the episode is over.
  bool step(const policy::PolicyWeights& w);
  /// Grounds a direction and queues its annotations for the next filter step.
  /// Returns the root symbols; throws on text that does not parse.
  std::vector<ground::Symbol> command(const std::string& text);

  bool done() const { return done_; }
  const RunRecord& record() const { return record_; }
  const policy::Goal& goal() const { return goal_; }
  const sim::RobotTruth& truth() const { return truth_; }
  /// World pose of the map frame (the start pose).
  const Pose2& frame() const { return frame_; }
  const sim::WorldSpec& world() const { return world_; }
  const rbpf::Filter& filter() const { return filter_; }
  const std::vector<policy::Action>& actions() const { return actions_; }
  int last_choice() const { return last_choice_; }
  Baseline baseline() const { return baseline_; }
  /// Belief the policy reasons over at the current state.
  map::SemanticMapBelief policy_belief() const;
  int step_cap() const { return cap_; }

  std::string snapshot_json() const;

 private:
  void refresh_goal();
  map::Particle true_map_particle() const;
  void finish();

  sim::WorldSpec world_;
  Direction dir_;
  Baseline baseline_;
  RunConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  Pose2 frame_;
  sim::RobotTruth truth_;
  std::vector<int> visited_;
  rbpf::Filter filter_;
  std::vector<rbpf::Annotation> pending_;
  std::vector<ground::Symbol> roots_;
  policy::Goal goal_;
  sim::NavGraph graph_;
  std::vector<policy::Action> actions_;
  int last_choice_ = -1;
  int cap_ = 0;
  bool done_ = false;
  bool observed_ = false;
  RunRecord record_;
};

RunRecord run_scenario(const Direction& dir, Baseline baseline, const policy::PolicyWeights& w, const RunConfig& cfg,
                       std::uint64_t seed);

// ---- training ----

struct PolicyTrainConfig {
  policy::DaggerConfig dagger;
  RunConfig run;
  std::vector<Baseline> baselines = {Baseline::WithLanguage, Baseline::WithoutLanguage, Baseline::KnownMap};
  int seeds_per_direction = 1;
  int max_decisions = 60;  ///< per training rollout
};

policy::DaggerResult train_policy(const std::vector<Direction>& train, const PolicyTrainConfig& cfg,
                                  std::uint64_t seed,
                                  const std::function<void(const policy::IterationStats&)>& progress = {});

/// Policy weights bundled under data/policy_weights.json.
const policy::PolicyWeights& default_policy();

// ---- evaluation ----

struct BaselineSummary {
  Baseline baseline = Baseline::WithLanguage;
  int runs = 0;
  double distance_mean = 0.0;
  double distance_std = 0.0;
  double steps_mean = 0.0;
  double steps_std = 0.0;
  double success_rate = 0.0;
  double end_error_mean = 0.0;
  double wall_ms_mean = 0.0;
};

struct Evaluation {
  std::vector<RunRecord> runs;
  std::vector<BaselineSummary> summary;
};

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
std::pair<double, double> mean_std(const std::vector<double>& v);

Evaluation evaluate(const std::vector<Direction>& dirs, const std::vector<Baseline>& baselines,
                    const std::vector<std::uint64_t>& seeds, const policy::PolicyWeights& w, const RunConfig& cfg);

std::string summary_csv(const Evaluation& e);
std::string runs_csv(const Evaluation& e);
extern const char* const kSummaryHeader;
extern const char* const kRunsHeader;

// ---- cross validation ----

struct XvalTrial {
  int trial = 0;
  std::vector<int> train;
  std::vector<int> held_out;
  double belief_error = 0.0;     ///< mean held-out ending distance error, belief policy
  double no_belief_error = 0.0;  ///< same, K = 1 on the MAP particle
};

struct XvalConfig {
  int train_n = 28;
  int trials = 20;
  PolicyTrainConfig train;
  RunConfig run;
};

std::vector<XvalTrial> cross_validate(const std::vector<Direction>& corpus, const XvalConfig& cfg, std::uint64_t seed,
                                      const std::function<void(const XvalTrial&)>& progress = {});

struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
/// Linear-interpolation quartiles.
Quartiles quartiles(std::vector<double> v);

std::string xval_csv(const std::vector<XvalTrial>& trials);
extern const char* const kXvalHeader;

}  // namespace wayfinder::harness
