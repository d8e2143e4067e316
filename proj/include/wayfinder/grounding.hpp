#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wayfinder/langparse.hpp"

namespace wayfinder::ground {

enum class SymbolClass : int { Object = 0, Subspace, TypedRelation, Action, Objective, Constraint };

/// A grounding. In annotation graphs `figure` and `landmark` are object-type
/// indices; in behavior graphs they index MapContext::objects.
/// Actions carry their goal in figure (object goal) or relation+landmark
/// (subspace goal); goal-free actions leave all three unset.
struct Symbol {
  SymbolClass cls = SymbolClass::Object;
  int figure = -1;
  int relation = -1;
  int landmark = -1;
  int action = -1;
  int objective = -1;

  auto operator<=>(const Symbol&) const = default;

  static Symbol object(int t) { return {SymbolClass::Object, t, -1, -1, -1, -1}; }
  static Symbol subspace(int r, int l) { return {SymbolClass::Subspace, -1, r, l, -1, -1}; }
  static Symbol typed(int f, int r, int l) { return {SymbolClass::TypedRelation, f, r, l, -1, -1}; }
  static Symbol act(int a, int goal = -1) { return {SymbolClass::Action, goal, -1, -1, a, -1}; }
  static Symbol act_sub(int a, int r, int l) { return {SymbolClass::Action, -1, r, l, a, -1}; }
  static Symbol objective_of(int j) { return {SymbolClass::Objective, -1, -1, -1, -1, j}; }
  static Symbol constraint(int r, int l) { return {SymbolClass::Constraint, -1, r, l, -1, -1}; }
};

struct Named {
  std::string name;
  std::vector<std::string> words;
};

class SymbolSpace {
 public:
  std::vector<Named> object_types;
  std::vector<Named> relations;
  std::vector<Named> actions;
  std::vector<Named> objectives;

  static SymbolSpace from_json_text(std::string_view text);
  static SymbolSpace load(const std::string& path);
  static const SymbolSpace& bundled();

  /// Same inventories truncated to the first n types and m relations.
  SymbolSpace restricted(std::size_t n_types, std::size_t n_relations) const;

  std::size_t subspace_count() const { return relations.size() * object_types.size(); }
  std::size_t typed_relation_count() const {
    return object_types.size() * subspace_count() - object_types.size() * relations.size();
  }
  std::size_t total_count() const { return object_types.size() + subspace_count() + typed_relation_count(); }

  /// Objects, then subspaces, then typed relations (figure type never equals landmark type).
  std::vector<Symbol> annotation_symbols() const;

  int type_index(std::string_view name) const;
  int relation_index(std::string_view name) const;
  int action_index(std::string_view name) const;
  int objective_index(std::string_view name) const;

  /// Text form of an annotation symbol, e.g. "kitchen(down(hallway))".
  std::string to_string(const Symbol& s) const;
  Symbol parse_symbol(std::string_view text) const;
};

struct MapObject {
  int id = 0;
  int type = 0;
};

/// World-model context for behavior grounding.
struct MapContext {
  std::vector<MapObject> objects;
  /// Support in [0, 1] that objects[figure] is `relation` of objects[landmark].
  std::function<double(int figure, int relation, int landmark)> relation_support;
};

/// Text form of a behavior symbol, e.g. "navigate(o1)" or "down(o2)".
std::string behavior_string(const SymbolSpace& space, const MapContext& map, const Symbol& s);

/// Constituent of a parse, listed in preorder. Preterminals are folded into
/// their parent as own words.
struct Phrase {
  std::string label;
  std::vector<std::string> words;
  std::vector<int> children;
  int parent = -1;
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<Phrase> phrases_of(const lang::ParseTree& tree);

/// A token and the head word of its nearest PP/ADVP ancestor ("-" if none).
struct TokenContext {
  std::string word;
  std::string ctx;
  std::string pos;

  /// Determiners, infinitival "to", wh-words, copulas and conjunctions.
  bool is_function_word() const;
};

std::vector<TokenContext> token_contexts(const lang::ParseTree& tree);

enum class Stage : int { Annotation = 0, Behavior = 1 };

class DimensionMismatchError : public std::runtime_error {
 public:
  explicit DimensionMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Identifier of the feature templates; weights trained under another id are rejected.
extern const char* const kTemplateId;

using FeatureMap = std::unordered_map<std::string, double>;

struct Weights {
  std::string template_id = kTemplateId;
  FeatureMap ann_prune;
  FeatureMap ann_factor;
  FeatureMap beh_prune;
  FeatureMap beh_factor;

  std::string to_json() const;
  static Weights from_json_text(std::string_view text);
  static Weights load(const std::string& path);
  void save(const std::string& path) const;
  void check() const;
};

double lookup(const FeatureMap& w, const std::string& key);

/// Pruning-classifier class key; behavior actions split by goal shape.
std::string prune_class(Stage stage, const Symbol& s);

enum class Slot : int { Figure = 0, Relation, Landmark, Action, Objective };

struct SlotValue {
  Slot slot;
  int index;
};

/// Slots a type-level symbol exposes to the lexical features.
std::vector<SlotValue> symbol_slots(const Symbol& s);

const char* slot_name(Slot s);
const Named& slot_entry(const SymbolSpace& space, SlotValue sv);

/// Lexical pruning features of one (class, slot, value) bucket, summed over tokens.
FeatureMap prune_bucket(const std::vector<TokenContext>& toks, const SymbolSpace& space, const std::string& cls,
                        SlotValue sv);

/// Inventory items mentioned by an utterance and the phrase context of each mention.
class MentionIndex {
 public:
  MentionIndex(const std::vector<TokenContext>& toks, const SymbolSpace& space);

  /// Role-signature feature key of a type-level symbol: per slot, whether
  /// the item is mentioned and whether in a goal (G), relational (R) or its
  /// own relation's (S) phrase.
  std::string conjunction(Stage stage, const Symbol& s) const;

 private:
  std::string roles(int type, int relation) const;

  const SymbolSpace* space_;
  std::vector<std::vector<std::string>> type_ctx_;
  std::vector<char> relation_;
  std::vector<char> action_;
  std::vector<char> objective_;
};

/// Explicit pruning feature vector of a type-level symbol.
FeatureMap prune_features(const lang::ParseTree& tree, const SymbolSpace& space, Stage stage, const Symbol& s);

struct Activation {
  Symbol symbol;
  double logit = 0.0;
};

/// Factorized activation logits for every symbol in `symbols`.
std::vector<Activation> activation_scores(const lang::ParseTree& tree, const SymbolSpace& space,
                                          const FeatureMap& w, Stage stage, const std::vector<Symbol>& symbols);

using ActiveSymbolSet = std::vector<Symbol>;

/// Annotation symbols whose activation probability exceeds 0.5.
ActiveSymbolSet prune_symbols(const lang::ParseTree& tree, const SymbolSpace& space, const Weights& w);

/// Type-level behavior symbols: objects, subspaces, actions by goal shape, objectives, constraints.
std::vector<Symbol> behavior_type_symbols(const SymbolSpace& space);

/// Type-level behavior symbols active for this utterance.
ActiveSymbolSet prune_behavior_types(const lang::ParseTree& tree, const SymbolSpace& space, const Weights& w);

/// Instantiates type-level behavior symbols over the objects of `map`.
std::vector<Symbol> instantiate(const std::vector<Symbol>& type_level, const MapContext& map);

/// Type-level view of a behavior symbol over `map`.
Symbol type_level(const Symbol& s, const MapContext& map);

struct GroundingGraph {
  Stage stage = Stage::Annotation;
  std::vector<Phrase> phrases;
  std::vector<Symbol> candidates;
  const SymbolSpace* space = nullptr;
  MapContext map;

  std::size_t correspondence_count() const { return phrases.size() * candidates.size(); }
};

/// Per-phrase correspondence bitmasks over graph candidates.
using Assignment = std::vector<std::uint32_t>;

/// Largest candidate list inference accepts; larger active sets are truncated by logit.
constexpr std::size_t kMaxCandidates = 10;

GroundingGraph build_annotation_graph(const lang::ParseTree& tree, const SymbolSpace& space,
                                      const ActiveSymbolSet& active);

/// Behavior graph over `map`, candidates instantiated from `type_active`
/// (pass behavior_type_symbols() to disable pruning).
GroundingGraph build_behavior_graph(const lang::ParseTree& tree, const SymbolSpace& space, const MapContext& map,
                                    const ActiveSymbolSet& type_active);

/// Feature vector of correspondence (phrase, candidate) given child masks.
FeatureMap factor_features(const GroundingGraph& g, int phrase, int cand, const Assignment& masks);

/// Log-odds that phrase/candidate correspond, given the masks of its children.
double factor_score(const GroundingGraph& g, const FeatureMap& w, int phrase, int cand, const Assignment& masks);

/// Joint log-probability of a full assignment.
double assignment_score(const GroundingGraph& g, const FeatureMap& w, const Assignment& a);

struct Inference {
  Assignment assignment;
  double score = 0.0;
  /// Root candidates with phi true, with their log-odds.
  std::vector<Activation> root;
};

/// Exact MAP over correspondences. Ties prefer false, earlier phrases and earlier candidates first.
Inference infer_map(const GroundingGraph& g, const FeatureMap& w);

Inference infer_annotations(const GroundingGraph& g, const Weights& w);

struct Behavior {
  int action = -1;
  int goal = -1;           ///< map-object index, or -1
  int goal_relation = -1;  ///< set for subspace goals
  int goal_landmark = -1;
  std::vector<int> objectives;
  std::vector<Symbol> constraints;
  std::vector<Activation> scores;  ///< per candidate root log-odds

  bool has_goal() const { return goal >= 0 || goal_landmark >= 0; }
};

Behavior infer_behavior(const GroundingGraph& g, const Weights& w);

std::string describe(const SymbolSpace& space, const MapContext& map, const Behavior& b);

/// End-to-end helpers.
std::vector<Symbol> ground_annotations(const lang::ParseTree& tree, const SymbolSpace& space, const Weights& w);
Behavior ground_behavior(const lang::ParseTree& tree, const SymbolSpace& space, const MapContext& map,
                         const Weights& w);

// ---- training ----

struct LabeledExample {
  std::string text;
  lang::ParseTree tree;
  /// Gold annotation symbols per phrase, preorder.
  std::vector<std::vector<Symbol>> gold;
};

std::vector<LabeledExample> load_corpus(const std::string& path, const SymbolSpace& space);
const std::vector<LabeledExample>& bundled_corpus();

/// Synthetic context map for an example: one object per mentioned type,
/// a same-type distractor when a relation narrows the figure, plus filler.
MapContext training_map(const LabeledExample& ex, const SymbolSpace& space);

/// Behavior gold per phrase for an example over `map`.
std::vector<std::vector<Symbol>> behavior_gold(const LabeledExample& ex, const SymbolSpace& space,
                                               const MapContext& map);

struct TrainConfig {
  double l2 = 1e-5;
  int epochs = 150;
  double step = 0.0;     ///< 0 picks 1/L from a smoothness bound
  bool adaptive = true;  ///< Barzilai-Borwein steps with backtracking; false gives fixed-step ascent
  double positive_weight = 5.0;
};

struct TrainReport {
  std::vector<double> objective;  ///< per epoch, concatenated across stages
  double final_objective = 0.0;
  double root_accuracy = 0.0;     ///< annotation root exact match on training set
  double behavior_accuracy = 0.0;
  double prune_recall = 0.0;      ///< fraction of utterances whose gold symbols are all active
};

Weights train_weights(const std::vector<LabeledExample>& corpus, const SymbolSpace& space,
                      const TrainConfig& config = {}, TrainReport* report = nullptr);

/// Weights trained on the bundled corpus with default config; computed once.
const Weights& default_weights();

// Generic weighted logistic regression used by all stages; exposed for tests.
struct SparseVec {
  std::vector<int> idx;
  std::vector<double> val;
};

struct LogisticProblem {
  std::vector<SparseVec> buckets;
  struct Instance {
    int bias = -1;
    std::vector<int> buckets;
    bool label = false;
    double weight = 1.0;
  };
  std::vector<Instance> instances;
  int dim = 0;
};

double logistic_objective(const LogisticProblem& p, const std::vector<double>& w, double l2);

/// Maximizes the weighted conditional log-likelihood; returns per-epoch objective.
std::vector<double> fit_logistic(const LogisticProblem& p, std::vector<double>& w, const TrainConfig& config);

}  // namespace wayfinder::ground
