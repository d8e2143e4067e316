#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "wayfinder/common.hpp"
#include "wayfinder/grounding.hpp"

namespace wayfinder::ground {

using nlohmann::json;

std::vector<LabeledExample> load_corpus(const std::string& path, const SymbolSpace& space) {
  const auto j = json::parse(read_file(path));
  std::vector<LabeledExample> out;
  for (const auto& e : j.at("examples")) {
    LabeledExample ex;
    ex.text = e.at("text").get<std::string>();
    ex.tree = lang::read_bracketed(e.at("tree").get<std::string>());
    const auto phrases = phrases_of(ex.tree);
    const auto& gold = e.at("phrases");
    if (gold.size() != phrases.size()) {
      throw std::runtime_error("corpus example '" + ex.text + "' lists " + std::to_string(gold.size()) +
                               " phrases, tree has " + std::to_string(phrases.size()));
    }
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (gold[i].at("label").get<std::string>() != phrases[i].label) {
        throw std::runtime_error("corpus example '" + ex.text + "' phrase " + std::to_string(i) + " label mismatch");
      }
      std::vector<Symbol> syms;
      for (const auto& s : gold[i].at("groundings")) syms.push_back(space.parse_symbol(s.get<std::string>()));
      std::sort(syms.begin(), syms.end());
      ex.gold.push_back(std::move(syms));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

const std::vector<LabeledExample>& bundled_corpus() {
  static const auto c = load_corpus(data_path("grounding_corpus.json"), SymbolSpace::bundled());
  return c;
}

namespace {

std::vector<Symbol> gold_union(const std::vector<std::vector<Symbol>>& gold) {
  std::set<Symbol> s;
  for (const auto& g : gold) s.insert(g.begin(), g.end());
  return {s.begin(), s.end()};
}

void mentioned_types(const Symbol& s, std::vector<int>& out) {
  for (int t : {s.figure, s.landmark}) {
    if (t >= 0 && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
}

/// Annotation-level facts the synthetic map satisfies: (figure type, relation, landmark type).
std::vector<std::array<int, 3>> typed_facts(const LabeledExample& ex) {
  std::vector<std::array<int, 3>> out;
  for (const auto& ph : ex.gold) {
    for (const auto& s : ph) {
      if (s.cls == SymbolClass::TypedRelation) out.push_back({s.figure, s.relation, s.landmark});
    }
  }
  return out;
}

std::vector<int> all_of_type(const MapContext& map, int t) {
  std::vector<int> out;
  for (std::size_t i = 0; i < map.objects.size(); ++i) {
    if (map.objects[i].type == t) out.push_back(static_cast<int>(i));
  }
  return out;
}

int verb_action(const SymbolSpace& space, const lang::ParseTree& tree) {
  std::function<int(const lang::ParseTree&)> rec = [&](const lang::ParseTree& n) -> int {
    if (n.is_preterminal()) {
      if (n.label != "VB") return -1;
      for (std::size_t a = 0; a < space.actions.size(); ++a) {
        const auto& w = space.actions[a].words;
        if (std::find(w.begin(), w.end(), n.word) != w.end()) return static_cast<int>(a);
      }
      return -1;
    }
    for (const auto& c : n.children) {
      if (int a = rec(c); a >= 0) return a;
    }
    return -1;
  };
  return rec(tree);
}

int objective_of_word(const SymbolSpace& space, const std::string& w) {
  for (std::size_t j = 0; j < space.objectives.size(); ++j) {
    const auto& ws = space.objectives[j].words;
    if (std::find(ws.begin(), ws.end(), w) != ws.end()) return static_cast<int>(j);
  }
  return -1;
}

}  // namespace

MapContext training_map(const LabeledExample& ex, const SymbolSpace& space) {
  std::vector<int> types;
  for (const auto& ph : ex.gold) {
    for (const auto& s : ph) mentioned_types(s, types);
  }
  MapContext map;
  int next_id = 1;
  for (int t : types) map.objects.push_back({next_id++, t});
  const auto facts = typed_facts(ex);
  for (const auto& s : ex.gold.empty() ? std::vector<Symbol>{} : ex.gold[0]) {
    if (s.cls == SymbolClass::TypedRelation) {
      map.objects.push_back({next_id++, s.figure});
      break;
    }
  }
  int fillers = 0;
  for (int t = 0; t < static_cast<int>(space.object_types.size()) && fillers < 2; ++t) {
    if (std::find(types.begin(), types.end(), t) == types.end()) {
      map.objects.push_back({next_id++, t});
      ++fillers;
    }
  }
  const auto objects = map.objects;
  map.relation_support = [objects, facts](int f, int r, int l) {
    const int tf = objects.at(f).type;
    const int tl = objects.at(l).type;
    // only the first object of a type is the one the facts describe
    for (std::size_t i = 0; i < static_cast<std::size_t>(f); ++i) {
      if (objects[i].type == tf) return 0.0;
    }
    for (const auto& x : facts) {
      if (x[0] == tf && x[1] == r && x[2] == tl) return 1.0;
    }
    return 0.0;
  };
  return map;
}

std::vector<std::vector<Symbol>> behavior_gold(const LabeledExample& ex, const SymbolSpace& space,
                                               const MapContext& map) {
  const auto phrases = phrases_of(ex.tree);
  std::vector<std::vector<Symbol>> out(phrases.size());
  auto supported = [&](int o, int r, int lt) {
    if (!map.relation_support) return true;
    for (int l : all_of_type(map, lt)) {
      if (l != o && map.relation_support(o, r, l) > 0.5) return true;
    }
    return false;
  };
  for (std::size_t p = 0; p < phrases.size(); ++p) {
    std::set<Symbol> b;
    std::set<int> narrowed;
    for (const auto& s : ex.gold[p]) {
      if (s.cls != SymbolClass::TypedRelation) continue;
      narrowed.insert(s.figure);
      for (int o : all_of_type(map, s.figure)) {
        if (supported(o, s.relation, s.landmark)) b.insert(Symbol::object(o));
      }
    }
    for (const auto& s : ex.gold[p]) {
      if (s.cls == SymbolClass::Object && !narrowed.count(s.figure)) {
        for (int o : all_of_type(map, s.figure)) b.insert(Symbol::object(o));
      } else if (s.cls == SymbolClass::Subspace) {
        for (int o : all_of_type(map, s.landmark)) b.insert(Symbol::subspace(s.relation, o));
      }
    }
    for (const auto& w : phrases[p].words) {
      if (int j = objective_of_word(space, w); j >= 0) b.insert(Symbol::objective_of(j));
    }
    if (p == 0) {
      std::set<Symbol> root;
      const int a = verb_action(space, ex.tree);
      std::vector<Symbol> goals, subs;
      for (const auto& s : b) {
        if (s.cls == SymbolClass::Object) goals.push_back(s);
        if (s.cls == SymbolClass::Subspace) subs.push_back(s);
      }
      if (a >= 0 && !goals.empty()) {
        for (const auto& g : goals) root.insert(Symbol::act(a, g.figure));
      } else if (a >= 0 && !subs.empty()) {
        for (const auto& s : subs) root.insert(Symbol::act_sub(a, s.relation, s.landmark));
      } else if (a >= 0 && (space.actions[a].name == "stop" || space.actions[a].name == "explore")) {
        root.insert(Symbol::act(a));
      }
      for (const auto& s : ex.gold[0]) {
        if (s.cls != SymbolClass::TypedRelation) continue;
        const auto& rel = space.relations[s.relation].name;
        if (rel != "past" && rel != "through") continue;
        for (int o : all_of_type(map, s.landmark)) root.insert(Symbol::constraint(s.relation, o));
      }
      for (const auto& t : lang::leaves(ex.tree)) {
        if (int j = objective_of_word(space, t); j >= 0) root.insert(Symbol::objective_of(j));
      }
      b = std::move(root);
    }
    out[p] = {b.begin(), b.end()};
  }
  return out;
}

// ---- logistic regression ----

namespace {

double log_sig(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sig(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double bucket_dot(const SparseVec& b, const std::vector<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.idx.size(); ++i) s += b.val[i] * w[b.idx[i]];
  return s;
}

struct Eval {
  double objective = 0.0;
  std::vector<double> grad;
};

Eval evaluate(const LogisticProblem& p, const std::vector<double>& w, double l2, bool want_grad) {
  double total_weight = 0.0;
  for (const auto& in : p.instances) total_weight += in.weight;
  std::vector<double> bd(p.buckets.size());
  for (std::size_t b = 0; b < p.buckets.size(); ++b) bd[b] = bucket_dot(p.buckets[b], w);
  Eval e;
  std::vector<double> bgrad;
  if (want_grad) {
    e.grad.assign(p.dim, 0.0);
    bgrad.assign(p.buckets.size(), 0.0);
  }
  for (const auto& in : p.instances) {
    double s = in.bias >= 0 ? w[in.bias] : 0.0;
    for (int b : in.buckets) s += bd[b];
    const double c = in.weight / total_weight;
    e.objective += c * (in.label ? log_sig(s) : log_sig(-s));
    if (want_grad) {
      const double r = c * ((in.label ? 1.0 : 0.0) - sig(s));
      if (in.bias >= 0) e.grad[in.bias] += r;
      for (int b : in.buckets) bgrad[b] += r;
    }
  }
  double sq = 0.0;
  for (double x : w) sq += x * x;
  e.objective -= 0.5 * l2 * sq;
  if (want_grad) {
    for (std::size_t b = 0; b < p.buckets.size(); ++b) {
      if (bgrad[b] == 0.0) continue;
      const auto& bk = p.buckets[b];
      for (std::size_t i = 0; i < bk.idx.size(); ++i) e.grad[bk.idx[i]] += bgrad[b] * bk.val[i];
    }
    for (int i = 0; i < p.dim; ++i) e.grad[i] -= l2 * w[i];
  }
  return e;
}

double smoothness_bound(const LogisticProblem& p, double l2) {
  std::vector<double> norm(p.buckets.size());
  for (std::size_t b = 0; b < p.buckets.size(); ++b) {
    double s = 0.0;
    for (double v : p.buckets[b].val) s += v * v;
    norm[b] = std::sqrt(s);
  }
  double worst = 0.0;
  for (const auto& in : p.instances) {
    double n = in.bias >= 0 ? 1.0 : 0.0;
    for (int b : in.buckets) n += norm[b];
    worst = std::max(worst, n * n);
  }
  return 0.25 * worst + l2;
}

}  // namespace

double logistic_objective(const LogisticProblem& p, const std::vector<double>& w, double l2) {
  return evaluate(p, w, l2, false).objective;
}

std::vector<double> fit_logistic(const LogisticProblem& p, std::vector<double>& w, const TrainConfig& config) {
  w.resize(p.dim, 0.0);
  std::vector<double> trace;
  if (p.instances.empty()) return trace;
  const double base = config.step > 0.0 ? config.step : 1.0 / smoothness_bound(p, config.l2);
  auto cur = evaluate(p, w, config.l2, true);
  double step = base;
  std::vector<double> next(p.dim);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (!std::isfinite(cur.objective)) {
      throw std::runtime_error("non-finite training objective at epoch " + std::to_string(epoch));
    }
    Eval cand;
    double eta = step;
    while (true) {
      for (int i = 0; i < p.dim; ++i) next[i] = w[i] + eta * cur.grad[i];
      cand = evaluate(p, next, config.l2, true);
      if (!config.adaptive || cand.objective >= cur.objective || eta <= base) break;
      eta = std::max(base, 0.5 * eta);
    }
    if (config.adaptive) {
      // Barzilai-Borwein step from the last displacement, never below the safe step
      double ss = 0.0, sy = 0.0;
      for (int i = 0; i < p.dim; ++i) {
        const double d = next[i] - w[i];
        ss += d * d;
        sy += d * (cand.grad[i] - cur.grad[i]);
      }
      step = sy < 0.0 ? std::clamp(-ss / sy, base, 1e4 * base) : base;
    }
    w = next;
    cur = std::move(cand);
    trace.push_back(cur.objective);
  }
  return trace;
}

// ---- training pipeline ----

namespace {

class FeatureIndex {
 public:
  int id(const std::string& key) {
    auto [it, inserted] = index_.emplace(key, static_cast<int>(names_.size()));
    if (inserted) names_.push_back(key);
    return it->second;
  }
  SparseVec vec(const FeatureMap& f) {
    std::map<int, double> sorted;
    for (const auto& [k, v] : f) sorted[id(k)] += v;
    SparseVec s;
    for (const auto& [i, v] : sorted) {
      s.idx.push_back(i);
      s.val.push_back(v);
    }
    return s;
  }
  int size() const { return static_cast<int>(names_.size()); }
  FeatureMap to_map(const std::vector<double>& w) const {
    FeatureMap m;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (w[i] != 0.0) m[names_[i]] = w[i];
    }
    return m;
  }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> names_;
};

struct PruneItem {
  const lang::ParseTree* tree;
  std::vector<Symbol> positives;
};

FeatureMap train_prune(const std::vector<PruneItem>& items, const SymbolSpace& space, Stage stage,
                       const std::vector<Symbol>& symbols, const TrainConfig& config, std::vector<double>& trace) {
  FeatureIndex fx;
  LogisticProblem p;
  std::unordered_map<std::string, int> conj;
  auto conj_bucket = [&](const std::string& key) {
    auto it = conj.find(key);
    if (it == conj.end()) {
      p.buckets.push_back(fx.vec({{key, 1.0}}));
      it = conj.emplace(key, static_cast<int>(p.buckets.size()) - 1).first;
    }
    return it->second;
  };
  for (const auto& item : items) {
    const auto toks = token_contexts(*item.tree);
    const MentionIndex mentions(toks, space);
    std::map<std::tuple<std::string, int, int>, int> buckets;
    for (const auto& s : symbols) {
      LogisticProblem::Instance in;
      const std::string cls = prune_class(stage, s);
      in.bias = fx.id("pb|" + cls);
      for (const auto& sv : symbol_slots(s)) {
        const auto key = std::make_tuple(cls, static_cast<int>(sv.slot), sv.index);
        auto it = buckets.find(key);
        if (it == buckets.end()) {
          p.buckets.push_back(fx.vec(prune_bucket(toks, space, cls, sv)));
          it = buckets.emplace(key, static_cast<int>(p.buckets.size()) - 1).first;
        }
        in.buckets.push_back(it->second);
      }
      in.buckets.push_back(conj_bucket(mentions.conjunction(stage, s)));
      in.label = std::binary_search(item.positives.begin(), item.positives.end(), s);
      in.weight = in.label ? config.positive_weight : 1.0;
      p.instances.push_back(std::move(in));
    }
  }
  p.dim = fx.size();
  std::vector<double> w;
  auto t = fit_logistic(p, w, config);
  trace.insert(trace.end(), t.begin(), t.end());
  return fx.to_map(w);
}

struct FactorItem {
  GroundingGraph graph;
  Assignment gold;
};

FeatureMap train_factors(const std::vector<FactorItem>& items, const TrainConfig& config, std::vector<double>& trace) {
  FeatureIndex fx;
  LogisticProblem p;
  for (const auto& item : items) {
    const auto& g = item.graph;
    for (int ph = 0; ph < static_cast<int>(g.phrases.size()); ++ph) {
      for (int c = 0; c < static_cast<int>(g.candidates.size()); ++c) {
        p.buckets.push_back(fx.vec(factor_features(g, ph, c, item.gold)));
        LogisticProblem::Instance in;
        in.buckets.push_back(static_cast<int>(p.buckets.size()) - 1);
        in.label = item.gold[ph] >> c & 1u;
        p.instances.push_back(std::move(in));
      }
    }
  }
  p.dim = fx.size();
  std::vector<double> w;
  auto t = fit_logistic(p, w, config);
  trace.insert(trace.end(), t.begin(), t.end());
  return fx.to_map(w);
}

Assignment gold_masks(const std::vector<Symbol>& candidates, const std::vector<std::vector<Symbol>>& gold) {
  Assignment a(gold.size(), 0);
  for (std::size_t p = 0; p < gold.size(); ++p) {
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (std::find(gold[p].begin(), gold[p].end(), candidates[c]) != gold[p].end()) a[p] |= 1u << c;
    }
  }
  return a;
}

std::vector<Symbol> merged(std::vector<Symbol> a, const std::vector<Symbol>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

}  // namespace

Weights train_weights(const std::vector<LabeledExample>& corpus, const SymbolSpace& space, const TrainConfig& config,
                      TrainReport* report) {
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  Weights w;
  std::vector<double> trace;

  // Annotation pruning.
  std::vector<PruneItem> items;
  for (const auto& ex : corpus) items.push_back({&ex.tree, gold_union(ex.gold)});
  w.ann_prune = train_prune(items, space, Stage::Annotation, space.annotation_symbols(), config, trace);

  // Annotation factors.
  std::vector<FactorItem> fitems;
  for (const auto& ex : corpus) {
    auto cands = merged(gold_union(ex.gold), prune_symbols(ex.tree, space, w));
    auto g = build_annotation_graph(ex.tree, space, cands);
    fitems.push_back({g, gold_masks(g.candidates, ex.gold)});
  }
  w.ann_factor = train_factors(fitems, config, trace);

  // Behavior pruning over type-level symbols.
  std::vector<MapContext> maps;
  std::vector<std::vector<std::vector<Symbol>>> bgold;
  std::vector<PruneItem> bitems;
  for (const auto& ex : corpus) {
    maps.push_back(training_map(ex, space));
    bgold.push_back(behavior_gold(ex, space, maps.back()));
    std::set<Symbol> types;
    for (const auto& ph : bgold.back()) {
      for (const auto& s : ph) types.insert(type_level(s, maps.back()));
    }
    bitems.push_back({&ex.tree, {types.begin(), types.end()}});
  }
  w.beh_prune = train_prune(bitems, space, Stage::Behavior, behavior_type_symbols(space), config, trace);

  // Behavior factors.
  fitems.clear();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto types = merged(bitems[i].positives, prune_behavior_types(corpus[i].tree, space, w));
    auto g = build_behavior_graph(corpus[i].tree, space, maps[i], types);
    fitems.push_back({g, gold_masks(g.candidates, bgold[i])});
  }
  w.beh_factor = train_factors(fitems, config, trace);

  if (report) {
    report->objective = trace;
    report->final_objective = trace.empty() ? 0.0 : trace.back();
    int root_ok = 0, beh_ok = 0, recall_ok = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& ex = corpus[i];
      const auto active = prune_symbols(ex.tree, space, w);
      const auto gold = gold_union(ex.gold);
      if (std::includes(active.begin(), active.end(), gold.begin(), gold.end())) ++recall_ok;
      auto root = ground_annotations(ex.tree, space, w);
      std::sort(root.begin(), root.end());
      if (root == ex.gold[0]) ++root_ok;
      const auto b = ground_behavior(ex.tree, space, maps[i], w);
      std::vector<Symbol> got;
      Symbol a = Symbol::act(b.action, b.goal);
      a.relation = b.goal_relation;
      a.landmark = b.goal_landmark;
      const auto& want = bgold[i][0];
      const bool want_action = std::any_of(want.begin(), want.end(),
                                           [](const Symbol& s) { return s.cls == SymbolClass::Action; });
      if (want_action || b.action != space.action_index("explore") || b.has_goal()) got.push_back(a);
      for (int j : b.objectives) got.push_back(Symbol::objective_of(j));
      got.insert(got.end(), b.constraints.begin(), b.constraints.end());
      std::sort(got.begin(), got.end());
      if (got == want) ++beh_ok;
    }
    const double n = static_cast<double>(corpus.size());
    report->root_accuracy = root_ok / n;
    report->behavior_accuracy = beh_ok / n;
    report->prune_recall = recall_ok / n;
  }
  return w;
}

const Weights& default_weights() {
  static const Weights w = train_weights(bundled_corpus(), SymbolSpace::bundled());
  return w;
}

}  // namespace wayfinder::ground
