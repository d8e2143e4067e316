#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wayfinder/common.hpp"
#include "wayfinder/relations.hpp"
#include "wayfinder/semmap.hpp"

namespace wayfinder::rbpf {

using geo::Pose2;
using geo::Vec2;
using map::Particle;
using map::SemanticMapBelief;

/// Figure type with an optional relation and landmark type (object-type indices).
struct Annotation {
  int figure = -1;
  int relation = -1;
  int landmark = -1;

  bool has_relation() const { return relation >= 0 && landmark >= 0; }
  auto operator<=>(const Annotation&) const = default;
};

struct AnnotationObservation {
  std::vector<Annotation> annotations;
  int step = 0;

  bool empty() const { return annotations.empty(); }
};

struct AppearanceObservation {
  int type = -1;  ///< -1 when nothing was observed
  bool transition = false;
  geo::Polygon extent_local;  ///< current region boundary, robot frame
};

enum class ModKind : int {
  AddHypothesizedRegion = 0,
  AddRelationEdge,
  AssignNodeToRegion,
  NewVisitedRegion,
  MergeHypothesizedIntoVisited,
  ResampleConstraint
};

const char* mod_name(ModKind k);

struct Modification {
  ModKind kind = ModKind::AssignNodeToRegion;
  int region = -1;
  int other = -1;
};

/// p(z | v, R) and p(v | R) for region appearance.
struct AppearanceModel {
  double p_valid = 0.8;
  double p_match = 0.9;     ///< p(z = type(R) | v = 1)
  double p_mismatch = 0.02; ///< p(z ≠ type(R) | v = 1)
  double p_invalid = 0.1;   ///< p(z | v = 0)
};

struct FilterConfig {
  int particles = 10;
  double ess_threshold = 0.5;
  double resample_nats = 1.0;
  double proximity = 2.0;
  double prior_distance = 8.0;  ///< hypothesized region prior: ahead of the robot
  double prior_sd = 8.0;
  bool language = true;
  AppearanceModel appearance;
  map::ConditionConfig condition;
};

struct StepInput {
  Pose2 odometry;
  Eigen::Matrix3d odometry_cov = Eigen::Matrix3d::Identity() * 1e-6;
  AppearanceObservation z;
  AnnotationObservation alpha;
};

struct Proposal {
  std::vector<Modification> mods;
  double log_language = 0.0;
  double log_appearance = 0.0;
};

/// Models shared by every particle.
struct FilterContext {
  const rel::RelationModels* relations = nullptr;
  std::size_t n_types = 0;
  FilterConfig config;
};

/// Factor of one region: Σ_v p(z|v,R) p(v|R).
double region_appearance_factor(bool matches, const AppearanceModel& m);

/// Product over hypothesized regions covering `robot` or centered inside the
/// observed extent. When none do, a transition is explained by a new region
/// of uniformly drawn type (1 / n_types); otherwise the factor is 1.
double appearance_likelihood(const Particle& p, const Pose2& robot, const AppearanceObservation& z,
                             const AppearanceModel& m, std::size_t n_types = 0);

/// Language term against the particle's current regions.
double language_log_likelihood(const Particle& p, const Pose2& robot, const AnnotationObservation& alpha,
                               const FilterContext& ctx);

void apply_language_mods(Particle& p, const AnnotationObservation& alpha, const FilterContext& ctx, Rng& rng,
                         std::vector<Modification>* mods = nullptr);

void apply_observation_mods(Particle& p, const AppearanceObservation& z, const FilterContext& ctx, Rng& rng,
                            std::vector<Modification>* mods = nullptr);

/// Motion extension, then language and observation modifications. Likelihood
/// terms are evaluated on the map as it stood before the modifications.
Proposal propose(Particle& p, const StepInput& in, int t, const FilterContext& ctx, Rng& rng);

void reweight(Particle& p, const Proposal& q);

double effective_sample_size(const std::vector<double>& weights);

/// Systematic resampling; returns the selected source indices.
std::vector<int> systematic_resample(const std::vector<double>& weights, Rng& rng);

/// Resamples when ESS < threshold·N. Returns true when it did.
bool resample_if_needed(SemanticMapBelief& belief, double threshold, Rng& rng);

/// Density governing a hypothesized region's placement.
const geo::Gaussian2* hypothesis_density(const Particle& p, int region);

/// Geometry of a region as seen by relation models.
rel::RegionGeom region_geom(const map::Region& r);

class Filter {
 public:
  Filter(FilterContext ctx, std::uint64_t seed);

  /// Seeds every particle with the start observation.
  void start(const AppearanceObservation& z0);
  /// Seeds a single particle with a given map.
  void start_from(const Particle& p);

  void step(const StepInput& in);

  const SemanticMapBelief& belief() const { return belief_; }
  SemanticMapBelief& belief() { return belief_; }
  const FilterContext& context() const { return ctx_; }
  std::uint64_t seed() const { return seed_; }
  bool last_resampled() const { return resampled_; }
  const std::vector<Proposal>& last_proposals() const { return proposals_; }

  /// JSON line summarizing the last step.
  std::string trace_line() const;
  std::function<void(const std::string&)> trace;

 private:
  FilterContext ctx_;
  std::uint64_t seed_;
  SemanticMapBelief belief_;
  std::vector<Proposal> proposals_;
  bool resampled_ = false;
};

}  // namespace wayfinder::rbpf
