#include "wayfinder/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include <json.hpp>

#include "wayfinder/common.hpp"

namespace wayfinder::ground {

using nlohmann::json;

const char* const kTemplateId = "grounding-templates/5:pb,pl,pc,pm,pj|b,w,r,l,m,p,s,e";

namespace {

std::vector<Named> read_named(const json& arr) {
  std::vector<Named> out;
  for (const auto& e : arr) {
    Named n;
    n.name = e.at("name").get<std::string>();
    n.words = e.value("words", std::vector<std::string>{});
    out.push_back(std::move(n));
  }
  return out;
}

int find_named(const std::vector<Named>& v, std::string_view name) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

bool has_word(const Named& n, const std::string& w) {
  return std::find(n.words.begin(), n.words.end(), w) != n.words.end();
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

// ---- symbol space ----

SymbolSpace SymbolSpace::from_json_text(std::string_view text) {
  const auto j = json::parse(text);
  SymbolSpace s;
  s.object_types = read_named(j.at("object_types"));
  s.relations = read_named(j.at("relations"));
  s.actions = read_named(j.at("actions"));
  s.objectives = read_named(j.at("objectives"));
  return s;
}

SymbolSpace SymbolSpace::load(const std::string& path) { return from_json_text(read_file(path)); }

const SymbolSpace& SymbolSpace::bundled() {
  static const SymbolSpace s = load(data_path("symbols.json"));
  return s;
}

SymbolSpace SymbolSpace::restricted(std::size_t n_types, std::size_t n_relations) const {
  SymbolSpace s = *this;
  s.object_types.resize(std::min(n_types, object_types.size()));
  s.relations.resize(std::min(n_relations, relations.size()));
  return s;
}

std::vector<Symbol> SymbolSpace::annotation_symbols() const {
  const int nt = static_cast<int>(object_types.size());
  const int nr = static_cast<int>(relations.size());
  std::vector<Symbol> out;
  out.reserve(total_count());
  for (int t = 0; t < nt; ++t) out.push_back(Symbol::object(t));
  for (int r = 0; r < nr; ++r) {
    for (int l = 0; l < nt; ++l) out.push_back(Symbol::subspace(r, l));
  }
  for (int f = 0; f < nt; ++f) {
    for (int r = 0; r < nr; ++r) {
      for (int l = 0; l < nt; ++l) {
        if (f != l) out.push_back(Symbol::typed(f, r, l));
      }
    }
  }
  return out;
}

int SymbolSpace::type_index(std::string_view name) const { return find_named(object_types, name); }
int SymbolSpace::relation_index(std::string_view name) const { return find_named(relations, name); }
int SymbolSpace::action_index(std::string_view name) const { return find_named(actions, name); }
int SymbolSpace::objective_index(std::string_view name) const { return find_named(objectives, name); }

std::string SymbolSpace::to_string(const Symbol& s) const {
  switch (s.cls) {
    case SymbolClass::Object:
      return object_types.at(s.figure).name;
    case SymbolClass::Subspace:
      return relations.at(s.relation).name + "(" + object_types.at(s.landmark).name + ")";
    case SymbolClass::TypedRelation:
      return object_types.at(s.figure).name + "(" + relations.at(s.relation).name + "(" +
             object_types.at(s.landmark).name + "))";
    case SymbolClass::Action: {
      std::string arg;
      if (s.figure >= 0) arg = object_types.at(s.figure).name;
      if (s.landmark >= 0) arg = relations.at(s.relation).name + "(" + object_types.at(s.landmark).name + ")";
      return actions.at(s.action).name + "(" + arg + ")";
    }
    case SymbolClass::Objective:
      return objectives.at(s.objective).name;
    case SymbolClass::Constraint:
      return "constraint(" + relations.at(s.relation).name + "(" + object_types.at(s.landmark).name + "))";
  }
  return "?";
}

Symbol SymbolSpace::parse_symbol(std::string_view text) const {
  auto fail = [&]() { return std::invalid_argument("unknown symbol '" + std::string(text) + "'"); };
  const auto open = text.find('(');
  if (open == std::string_view::npos) {
    const int t = type_index(text);
    if (t < 0) throw fail();
    return Symbol::object(t);
  }
  if (text.back() != ')') throw fail();
  const auto head = text.substr(0, open);
  const auto inner = text.substr(open + 1, text.size() - open - 2);
  if (inner.find('(') == std::string_view::npos) {
    const int r = relation_index(head);
    const int l = type_index(inner);
    if (r < 0 || l < 0) throw fail();
    return Symbol::subspace(r, l);
  }
  const int f = type_index(head);
  const Symbol sub = parse_symbol(inner);
  if (f < 0 || sub.cls != SymbolClass::Subspace || f == sub.landmark) throw fail();
  return Symbol::typed(f, sub.relation, sub.landmark);
}

std::string behavior_string(const SymbolSpace& space, const MapContext& map, const Symbol& s) {
  auto obj = [&](int i) { return "o" + std::to_string(map.objects.at(i).id); };
  auto sub = [&](int r, int l) { return space.relations.at(r).name + "(" + obj(l) + ")"; };
  switch (s.cls) {
    case SymbolClass::Object:
      return obj(s.figure);
    case SymbolClass::Subspace:
      return sub(s.relation, s.landmark);
    case SymbolClass::TypedRelation:
      return obj(s.figure) + "(" + sub(s.relation, s.landmark) + ")";
    case SymbolClass::Action: {
      std::string arg;
      if (s.figure >= 0) arg = obj(s.figure);
      if (s.landmark >= 0) arg = sub(s.relation, s.landmark);
      return space.actions.at(s.action).name + "(" + arg + ")";
    }
    case SymbolClass::Objective:
      return space.objectives.at(s.objective).name;
    case SymbolClass::Constraint:
      return "constraint(" + sub(s.relation, s.landmark) + ")";
  }
  return "?";
}

// ---- phrases ----

std::vector<Phrase> phrases_of(const lang::ParseTree& tree) {
  std::vector<Phrase> out;
  std::function<int(const lang::ParseTree&, int)> rec = [&](const lang::ParseTree& n, int parent) {
    const int id = static_cast<int>(out.size());
    out.push_back({n.label, {}, {}, parent, n.begin, n.end});
    for (const auto& c : n.children) {
      if (c.is_preterminal()) {
        out[id].words.push_back(c.word);
      } else {
        const int cid = rec(c, id);
        out[id].children.push_back(cid);
      }
    }
    return id;
  };
  if (!tree.is_preterminal()) rec(tree, -1);
  return out;
}

std::vector<TokenContext> token_contexts(const lang::ParseTree& tree) {
  std::vector<TokenContext> out;
  std::function<void(const lang::ParseTree&, const std::string&)> rec = [&](const lang::ParseTree& n,
                                                                            const std::string& ctx) {
    if (n.is_preterminal()) {
      out.push_back({n.word, ctx, n.label});
      return;
    }
    std::string here = ctx;
    if (n.label == "PP" || n.label == "ADVP") {
      for (const auto& c : n.children) {
        if (c.is_preterminal()) {
          // "left of X", "far from X": the landmark belongs to the outer phrase
          if (!((c.word == "of" || c.word == "from") && ctx != "-")) here = c.word;
          break;
        }
      }
    }
    for (const auto& c : n.children) rec(c, here);
  };
  rec(tree, "-");
  return out;
}

bool TokenContext::is_function_word() const {
  return pos == "DT" || pos == "TO" || pos == "WDT" || pos == "VBZ" || pos == "CC";
}

// ---- weights ----

double lookup(const FeatureMap& w, const std::string& key) {
  const auto it = w.find(key);
  return it == w.end() ? 0.0 : it->second;
}

namespace {

json dump_map(const FeatureMap& m) {
  std::map<std::string, double> sorted(m.begin(), m.end());
  json j = json::object();
  for (const auto& [k, v] : sorted) {
    if (v != 0.0) j[k] = v;
  }
  return j;
}

FeatureMap read_map(const json& j) {
  FeatureMap m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it.value().get<double>();
  return m;
}

}  // namespace

std::string Weights::to_json() const {
  json j;
  j["template"] = template_id;
  j["ann_prune"] = dump_map(ann_prune);
  j["ann_factor"] = dump_map(ann_factor);
  j["beh_prune"] = dump_map(beh_prune);
  j["beh_factor"] = dump_map(beh_factor);
  return j.dump(1);
}

Weights Weights::from_json_text(std::string_view text) {
  const auto j = json::parse(text);
  Weights w;
  w.template_id = j.at("template").get<std::string>();
  w.ann_prune = read_map(j.at("ann_prune"));
  w.ann_factor = read_map(j.at("ann_factor"));
  w.beh_prune = read_map(j.at("beh_prune"));
  w.beh_factor = read_map(j.at("beh_factor"));
  return w;
}

Weights Weights::load(const std::string& path) { return from_json_text(read_file(path)); }

void Weights::save(const std::string& path) const { write_file(path, to_json()); }

void Weights::check() const {
  if (template_id != kTemplateId) {
    throw DimensionMismatchError("weights were trained for feature template '" + template_id + "', expected '" +
                                 kTemplateId + "'");
  }
}

// ---- pruning ----

std::string prune_class(Stage stage, const Symbol& s) {
  const char* p = stage == Stage::Annotation ? "A." : "B.";
  switch (s.cls) {
    case SymbolClass::Object:
      return std::string(p) + "obj";
    case SymbolClass::Subspace:
      return std::string(p) + "sub";
    case SymbolClass::TypedRelation:
      return std::string(p) + "typ";
    case SymbolClass::Action:
      if (s.figure >= 0) return std::string(p) + "act-obj";
      if (s.landmark >= 0) return std::string(p) + "act-sub";
      return std::string(p) + "act";
    case SymbolClass::Objective:
      return std::string(p) + "goal";
    case SymbolClass::Constraint:
      return std::string(p) + "con";
  }
  return p;
}

std::vector<SlotValue> symbol_slots(const Symbol& s) {
  std::vector<SlotValue> out;
  if (s.action >= 0) out.push_back({Slot::Action, s.action});
  if (s.figure >= 0) out.push_back({Slot::Figure, s.figure});
  if (s.relation >= 0) out.push_back({Slot::Relation, s.relation});
  if (s.landmark >= 0) out.push_back({Slot::Landmark, s.landmark});
  if (s.objective >= 0) out.push_back({Slot::Objective, s.objective});
  return out;
}

const char* slot_name(Slot s) {
  switch (s) {
    case Slot::Figure:
      return "fig";
    case Slot::Relation:
      return "rel";
    case Slot::Landmark:
      return "lm";
    case Slot::Action:
      return "act";
    case Slot::Objective:
      return "obj";
  }
  return "?";
}

const Named& slot_entry(const SymbolSpace& space, SlotValue sv) {
  switch (sv.slot) {
    case Slot::Figure:
    case Slot::Landmark:
      return space.object_types.at(sv.index);
    case Slot::Relation:
      return space.relations.at(sv.index);
    case Slot::Action:
      return space.actions.at(sv.index);
    case Slot::Objective:
      return space.objectives.at(sv.index);
  }
  throw std::logic_error("bad slot");
}

namespace {

double bucket_dot(const FeatureMap& w, const std::vector<TokenContext>& toks, const SymbolSpace& space,
                  const std::string& cls, SlotValue sv) {
  const Named& e = slot_entry(space, sv);
  const std::string head = cls + "|" + slot_name(sv.slot) + "|";
  double s = 0.0;
  for (const auto& t : toks) {
    if (has_word(e, t.word)) s += lookup(w, "pm|" + head + t.ctx);
    if (t.is_function_word() || (t.pos == "VB") != (sv.slot == Slot::Action)) continue;
    s += lookup(w, "pl|" + head + e.name + "|" + t.word);
    s += lookup(w, "pc|" + head + e.name + "|" + t.word + "|" + t.ctx);
  }
  return s;
}

bool any_word(const std::vector<Named>& v, const std::string& w) {
  return std::any_of(v.begin(), v.end(), [&](const Named& n) { return has_word(n, w); });
}

std::vector<std::string> split_words(const std::string& name) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : name) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

FeatureMap prune_bucket(const std::vector<TokenContext>& toks, const SymbolSpace& space, const std::string& cls,
                        SlotValue sv) {
  FeatureMap out;
  const Named& e = slot_entry(space, sv);
  const std::string head = cls + "|" + slot_name(sv.slot) + "|";
  for (const auto& t : toks) {
    if (has_word(e, t.word)) out["pm|" + head + t.ctx] += 1.0;
    if (t.is_function_word() || (t.pos == "VB") != (sv.slot == Slot::Action)) continue;
    out["pl|" + head + e.name + "|" + t.word] += 1.0;
    out["pc|" + head + e.name + "|" + t.word + "|" + t.ctx] += 1.0;
  }
  return out;
}

static std::vector<std::pair<int, std::size_t>> type_mentions(const SymbolSpace& space,
                                                       const std::vector<std::string>& words) {
  const std::size_t nt = space.object_types.size();
  std::vector<std::pair<int, std::size_t>> out;
  for (std::size_t i = 0; i < words.size();) {
    std::size_t used = 0;
    for (std::size_t t = 0; t < nt && !used; ++t) {
      const auto nm = split_words(space.object_types[t].name);
      if (nm.size() < 2 || i + nm.size() > words.size()) continue;
      if (std::equal(nm.begin(), nm.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
        out.emplace_back(static_cast<int>(t), i + nm.size() - 1);
        used = nm.size();
      }
    }
    if (!used) {
      for (std::size_t t = 0; t < nt; ++t) {
        const auto& e = space.object_types[t];
        if (e.name.find(' ') == std::string::npos && has_word(e, words[i])) out.emplace_back(static_cast<int>(t), i);
      }
      used = 1;
    }
    i += used;
  }
  return out;
}

MentionIndex::MentionIndex(const std::vector<TokenContext>& toks, const SymbolSpace& space)
    : space_(&space),
      type_ctx_(space.object_types.size()),
      relation_(space.relations.size(), 0),
      action_(space.actions.size(), 0),
      objective_(space.objectives.size(), 0) {
  std::vector<std::string> words;
  for (const auto& t : toks) words.push_back(t.word);
  for (const auto& [t, i] : type_mentions(space, words)) type_ctx_[t].push_back(toks[i].ctx);
  for (const auto& w : words) {
    for (std::size_t r = 0; r < relation_.size(); ++r) relation_[r] |= has_word(space.relations[r], w);
    for (std::size_t a = 0; a < action_.size(); ++a) action_[a] |= has_word(space.actions[a], w);
    for (std::size_t j = 0; j < objective_.size(); ++j) objective_[j] |= has_word(space.objectives[j], w);
  }
}

std::string MentionIndex::roles(int type, int relation) const {
  std::string out;
  for (const auto& ctx : type_ctx_.at(type)) {
    char r = 'G';
    if (relation >= 0 && has_word(space_->relations[relation], ctx)) {
      r = 'S';
    } else if (any_word(space_->relations, ctx)) {
      r = 'R';
    }
    if (out.find(r) == std::string::npos) out += r;
  }
  std::sort(out.begin(), out.end());
  return out.empty() ? "n" : out;
}

std::string MentionIndex::conjunction(Stage stage, const Symbol& s) const {
  std::string key = "pj|" + prune_class(stage, s);
  for (const auto& sv : symbol_slots(s)) {
    key += std::string("|") + slot_name(sv.slot) + ":";
    switch (sv.slot) {
      case Slot::Figure:
        key += roles(sv.index, s.relation);
        break;
      case Slot::Landmark:
        key += roles(sv.index, s.relation);
        break;
      case Slot::Relation:
        key += relation_.at(sv.index) ? "y" : "n";
        break;
      case Slot::Action:
        key += action_.at(sv.index) ? "y" : "n";
        break;
      case Slot::Objective:
        key += objective_.at(sv.index) ? "y" : "n";
        break;
    }
  }
  return key;
}

FeatureMap prune_features(const lang::ParseTree& tree, const SymbolSpace& space, Stage stage, const Symbol& s) {
  const auto toks = token_contexts(tree);
  const std::string cls = prune_class(stage, s);
  FeatureMap f;
  f["pb|" + cls] = 1.0;
  f[MentionIndex(toks, space).conjunction(stage, s)] += 1.0;
  for (const auto& sv : symbol_slots(s)) {
    for (const auto& [k, v] : prune_bucket(toks, space, cls, sv)) f[k] += v;
  }
  return f;
}

std::vector<Activation> activation_scores(const lang::ParseTree& tree, const SymbolSpace& space, const FeatureMap& w,
                                          Stage stage, const std::vector<Symbol>& symbols) {
  const auto toks = token_contexts(tree);
  const MentionIndex mentions(toks, space);
  std::map<std::tuple<std::string, int, int>, double> cache;
  std::vector<Activation> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) {
    const std::string cls = prune_class(stage, s);
    double logit = lookup(w, "pb|" + cls) + lookup(w, mentions.conjunction(stage, s));
    for (const auto& sv : symbol_slots(s)) {
      const auto key = std::make_tuple(cls, static_cast<int>(sv.slot), sv.index);
      auto it = cache.find(key);
      if (it == cache.end()) it = cache.emplace(key, bucket_dot(w, toks, space, cls, sv)).first;
      logit += it->second;
    }
    out.push_back({s, logit});
  }
  return out;
}

namespace {

/// Symbols with positive logit, the top kMaxCandidates by logit, in symbol order.
std::vector<Activation> select_active(std::vector<Activation> scored) {
  std::vector<Activation> pos;
  for (const auto& a : scored) {
    if (a.logit > 0.0) pos.push_back(a);
  }
  if (pos.size() > kMaxCandidates) {
    std::stable_sort(pos.begin(), pos.end(), [](const Activation& a, const Activation& b) { return a.logit > b.logit; });
    pos.resize(kMaxCandidates);
  }
  std::sort(pos.begin(), pos.end(), [](const Activation& a, const Activation& b) { return a.symbol < b.symbol; });
  return pos;
}

std::vector<Symbol> symbols_of(const std::vector<Activation>& a) {
  std::vector<Symbol> out;
  for (const auto& x : a) out.push_back(x.symbol);
  return out;
}

}  // namespace

ActiveSymbolSet prune_symbols(const lang::ParseTree& tree, const SymbolSpace& space, const Weights& w) {
  w.check();
  return symbols_of(
      select_active(activation_scores(tree, space, w.ann_prune, Stage::Annotation, space.annotation_symbols())));
}

std::vector<Symbol> behavior_type_symbols(const SymbolSpace& space) {
  const int nt = static_cast<int>(space.object_types.size());
  const int nr = static_cast<int>(space.relations.size());
  const int na = static_cast<int>(space.actions.size());
  std::vector<Symbol> out;
  for (int t = 0; t < nt; ++t) out.push_back(Symbol::object(t));
  for (int r = 0; r < nr; ++r) {
    for (int l = 0; l < nt; ++l) out.push_back(Symbol::subspace(r, l));
  }
  for (int a = 0; a < na; ++a) {
    for (int t = 0; t < nt; ++t) out.push_back(Symbol::act(a, t));
    for (int r = 0; r < nr; ++r) {
      for (int l = 0; l < nt; ++l) out.push_back(Symbol::act_sub(a, r, l));
    }
  }
  for (const char* name : {"explore", "stop"}) {
    if (const int a = space.action_index(name); a >= 0) out.push_back(Symbol::act(a));
  }
  for (int j = 0; j < static_cast<int>(space.objectives.size()); ++j) out.push_back(Symbol::objective_of(j));
  for (int r = 0; r < nr; ++r) {
    for (int l = 0; l < nt; ++l) out.push_back(Symbol::constraint(r, l));
  }
  return out;
}

ActiveSymbolSet prune_behavior_types(const lang::ParseTree& tree, const SymbolSpace& space, const Weights& w) {
  w.check();
  auto scored = activation_scores(tree, space, w.beh_prune, Stage::Behavior, behavior_type_symbols(space));
  std::vector<Symbol> out;
  for (const auto& a : scored) {
    if (a.logit > 0.0) out.push_back(a.symbol);
  }
  return out;
}

std::vector<Symbol> instantiate(const std::vector<Symbol>& types, const MapContext& map) {
  std::vector<int> idx;
  std::vector<Symbol> out;
  auto of_type = [&](int t) {
    idx.clear();
    for (std::size_t i = 0; i < map.objects.size(); ++i) {
      if (map.objects[i].type == t) idx.push_back(static_cast<int>(i));
    }
    return idx;
  };
  for (const auto& s : types) {
    if (s.figure >= 0 && s.landmark >= 0) {
      const auto figs = of_type(s.figure);
      for (int f : figs) {
        Symbol x = s;
        x.figure = f;
        for (int l : of_type(s.landmark)) {
          x.landmark = l;
          out.push_back(x);
        }
      }
    } else if (s.figure >= 0) {
      for (int f : of_type(s.figure)) {
        Symbol x = s;
        x.figure = f;
        out.push_back(x);
      }
    } else if (s.landmark >= 0) {
      for (int l : of_type(s.landmark)) {
        Symbol x = s;
        x.landmark = l;
        out.push_back(x);
      }
    } else {
      out.push_back(s);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Symbol type_level(const Symbol& s, const MapContext& map) {
  Symbol t = s;
  if (t.figure >= 0) t.figure = map.objects.at(t.figure).type;
  if (t.landmark >= 0) t.landmark = map.objects.at(t.landmark).type;
  return t;
}

// ---- graphs ----

GroundingGraph build_annotation_graph(const lang::ParseTree& tree, const SymbolSpace& space,
                                      const ActiveSymbolSet& active) {
  GroundingGraph g;
  g.stage = Stage::Annotation;
  g.phrases = phrases_of(tree);
  g.candidates = active;
  std::sort(g.candidates.begin(), g.candidates.end());
  g.candidates.erase(std::unique(g.candidates.begin(), g.candidates.end()), g.candidates.end());
  g.space = &space;
  return g;
}

GroundingGraph build_behavior_graph(const lang::ParseTree& tree, const SymbolSpace& space, const MapContext& map,
                                    const ActiveSymbolSet& type_active) {
  GroundingGraph g;
  g.stage = Stage::Behavior;
  g.phrases = phrases_of(tree);
  g.candidates = instantiate(type_active, map);
  g.space = &space;
  g.map = map;
  return g;
}

namespace {

std::string factor_class(const GroundingGraph& g, const Symbol& s) { return prune_class(g.stage, s); }

Symbol slot_view(const GroundingGraph& g, const Symbol& s) {
  return g.stage == Stage::Behavior ? type_level(s, g.map) : s;
}

bool has_relation(const Symbol& s) { return s.relation >= 0; }

const char* match_kind(const Symbol& p, const Symbol& c) {
  if (p == c) return "same";
  switch (c.cls) {
    case SymbolClass::Object:
      if (p.figure >= 0 && p.figure == c.figure) return "fig";
      if (p.landmark >= 0 && p.landmark == c.figure) return "lm";
      return "other";
    case SymbolClass::Subspace:
      if (has_relation(p) && p.relation == c.relation && p.landmark == c.landmark) return "sub";
      if (p.cls == SymbolClass::Object && c.landmark == p.figure) return "lmof";
      return "other";
    case SymbolClass::TypedRelation:
      if (p.figure >= 0 && p.figure == c.figure) return "fig";
      if (p.cls == SymbolClass::Subspace && p.relation == c.relation && p.landmark == c.landmark) return "sub";
      return "other";
    default:
      return p.cls == c.cls ? "kin" : "other";
  }
}

/// Pieces of a factor: features that do not depend on children, and
/// per-(child candidate) additive features.
void base_features(const GroundingGraph& g, int phrase, int cand, FeatureMap& f) {
  const Phrase& ph = g.phrases[phrase];
  const Symbol& s = g.candidates[cand];
  const Symbol v = slot_view(g, s);
  const std::string cls = factor_class(g, s);
  f["b|" + cls + "|" + ph.label] += 1.0;
  for (const auto& w : ph.words) {
    f["w|" + cls + "|" + ph.label + "|" + w] += 1.0;
    if (any_word(g.space->relations, w)) {
      const bool own = v.relation >= 0 && has_word(g.space->relations[v.relation], w);
      f[std::string("r|") + cls + "|" + ph.label + (own ? "|own" : "|other")] += 1.0;
    }
  }
  const auto mentioned = type_mentions(*g.space, ph.words);
  for (const auto& sv : symbol_slots(v)) {
    const Named& e = slot_entry(*g.space, sv);
    bool matched = false;
    const bool typed_slot = sv.slot == Slot::Figure || sv.slot == Slot::Landmark;
    for (const auto& w : ph.words) {
      f["l|" + cls + "|" + slot_name(sv.slot) + "|" + e.name + "|" + w] += 1.0;
      if (!typed_slot) matched = matched || has_word(e, w);
    }
    if (typed_slot) {
      matched = std::any_of(mentioned.begin(), mentioned.end(), [&](const auto& m) { return m.first == sv.index; });
    }
    if (matched) f["m|" + cls + "|" + slot_name(sv.slot) + "|" + ph.label] += 1.0;
  }
}

double support(const GroundingGraph& g, const Symbol& p, const Symbol& c) {
  if (g.stage != Stage::Behavior || !g.map.relation_support) return -1.0;
  if (p.figure < 0 || c.cls != SymbolClass::Subspace) return -1.0;
  if (p.cls != SymbolClass::Object && p.cls != SymbolClass::Action) return -1.0;
  if (p.figure == c.landmark) return -1.0;
  return g.map.relation_support(p.figure, c.relation, c.landmark);
}

void pair_features(const GroundingGraph& g, int phrase, int cand, int child_cand, FeatureMap& f) {
  const Phrase& ph = g.phrases[phrase];
  const Symbol& p = g.candidates[cand];
  const Symbol& c = g.candidates[child_cand];
  const std::string cls = factor_class(g, p);
  f["p|" + ph.label + "|" + cls + "|" + factor_class(g, c) + "|" + match_kind(p, c)] += 1.0;
  if (const double s = support(g, p, c); s >= 0.0) f["s|" + ph.label + "|" + cls] += s;
}

void empty_features(const GroundingGraph& g, int phrase, int cand, FeatureMap& f) {
  f["e|" + factor_class(g, g.candidates[cand]) + "|" + g.phrases[phrase].label] += 1.0;
}

double dot(const FeatureMap& w, const FeatureMap& f) {
  double s = 0.0;
  for (const auto& [k, v] : f) s += v * lookup(w, k);
  return s;
}

bool children_empty(const GroundingGraph& g, int phrase, const Assignment& masks) {
  for (int ch : g.phrases[phrase].children) {
    if (masks[ch] != 0) return false;
  }
  return true;
}

}  // namespace

FeatureMap factor_features(const GroundingGraph& g, int phrase, int cand, const Assignment& masks) {
  FeatureMap f;
  base_features(g, phrase, cand, f);
  if (children_empty(g, phrase, masks)) {
    empty_features(g, phrase, cand, f);
    return f;
  }
  const int n = static_cast<int>(g.candidates.size());
  for (int ch : g.phrases[phrase].children) {
    for (int c = 0; c < n; ++c) {
      if (masks[ch] >> c & 1u) pair_features(g, phrase, cand, c, f);
    }
  }
  return f;
}

double factor_score(const GroundingGraph& g, const FeatureMap& w, int phrase, int cand, const Assignment& masks) {
  return dot(w, factor_features(g, phrase, cand, masks));
}

double assignment_score(const GroundingGraph& g, const FeatureMap& w, const Assignment& a) {
  double total = 0.0;
  for (int p = 0; p < static_cast<int>(g.phrases.size()); ++p) {
    for (int c = 0; c < static_cast<int>(g.candidates.size()); ++c) {
      const double s = factor_score(g, w, p, c, a);
      total += (a[p] >> c & 1u) ? log_sigmoid(s) : log_sigmoid(-s);
    }
  }
  return total;
}

namespace {

/// Lexicographic rank of a mask with candidate 0 most significant; false first.
std::uint32_t lex_key(std::uint32_t mask, int n) {
  std::uint32_t k = 0;
  for (int c = 0; c < n; ++c) k = (k << 1) | (mask >> c & 1u);
  return k;
}

}  // namespace

Inference infer_map(const GroundingGraph& g, const FeatureMap& w) {
  const int np = static_cast<int>(g.phrases.size());
  const int n = static_cast<int>(g.candidates.size());
  if (static_cast<std::size_t>(n) > kMaxCandidates) {
    throw std::invalid_argument("grounding graph has " + std::to_string(n) + " candidates; limit is " +
                                std::to_string(kMaxCandidates));
  }
  Inference out;
  out.assignment.assign(np, 0);
  if (np == 0) return out;
  const std::uint32_t states = 1u << n;

  // Precomputed factor pieces.
  std::vector<std::vector<double>> base(np, std::vector<double>(n)), empty(np, std::vector<double>(n));
  // pair[p][c * n + c'] : contribution of child candidate c' being true to parent candidate c.
  std::vector<std::vector<double>> pair(np, std::vector<double>(static_cast<std::size_t>(n) * n));
  for (int p = 0; p < np; ++p) {
    for (int c = 0; c < n; ++c) {
      FeatureMap f;
      base_features(g, p, c, f);
      base[p][c] = dot(w, f);
      FeatureMap e;
      empty_features(g, p, c, e);
      empty[p][c] = dot(w, e);
      for (int c2 = 0; c2 < n; ++c2) {
        FeatureMap q;
        pair_features(g, p, c, c2, q);
        pair[p][c * n + c2] = dot(w, q);
      }
    }
  }

  std::vector<std::vector<double>> best(np, std::vector<double>(states));
  std::vector<std::vector<std::vector<std::uint32_t>>> choice(np);
  std::vector<double> s(n), gain(n), val(states);
  for (int p = np - 1; p >= 0; --p) {
    const auto& kids = g.phrases[p].children;
    const int k = static_cast<int>(kids.size());
    choice[p].assign(states, std::vector<std::uint32_t>(k, 0));
    std::vector<double>& bp = best[p];
    std::fill(bp.begin(), bp.end(), -std::numeric_limits<double>::infinity());
    std::vector<std::uint32_t> joint(k, 0);
    while (true) {
      double childsum = 0.0;
      bool all_empty = true;
      for (int i = 0; i < k; ++i) {
        childsum += best[kids[i]][joint[i]];
        all_empty = all_empty && joint[i] == 0;
      }
      double base_total = 0.0;
      for (int c = 0; c < n; ++c) {
        double sc = base[p][c];
        if (all_empty) {
          sc += empty[p][c];
        } else {
          for (int i = 0; i < k; ++i) {
            for (std::uint32_t m = joint[i]; m; m &= m - 1) sc += pair[p][c * n + __builtin_ctz(m)];
          }
        }
        s[c] = sc;
        base_total += log_sigmoid(-sc);
        gain[c] = log_sigmoid(sc) - log_sigmoid(-sc);
      }
      val[0] = childsum + base_total;
      for (std::uint32_t m = 1; m < states; ++m) {
        const int hi = 31 - __builtin_clz(m);
        val[m] = val[m & ~(1u << hi)] + gain[hi];
      }
      for (std::uint32_t m = 0; m < states; ++m) {
        bool better = val[m] > bp[m];
        if (!better && val[m] == bp[m]) {
          for (int i = 0; i < k; ++i) {
            const auto a = lex_key(joint[i], n), b = lex_key(choice[p][m][i], n);
            if (a != b) {
              better = a < b;
              break;
            }
          }
        }
        if (better) {
          bp[m] = val[m];
          choice[p][m] = joint;
        }
      }
      int i = 0;
      while (i < k && ++joint[i] == states) joint[i++] = 0;
      if (i == k) break;
    }
  }

  std::uint32_t root = 0;
  for (std::uint32_t m = 1; m < states; ++m) {
    if (best[0][m] > best[0][root] || (best[0][m] == best[0][root] && lex_key(m, n) < lex_key(root, n))) root = m;
  }
  out.score = best[0][root];
  std::function<void(int, std::uint32_t)> back = [&](int p, std::uint32_t m) {
    out.assignment[p] = m;
    const auto& kids = g.phrases[p].children;
    for (std::size_t i = 0; i < kids.size(); ++i) back(kids[i], choice[p][m][i]);
  };
  back(0, root);
  for (int c = 0; c < n; ++c) {
    if (root >> c & 1u) out.root.push_back({g.candidates[c], factor_score(g, w, 0, c, out.assignment)});
  }
  return out;
}

Inference infer_annotations(const GroundingGraph& g, const Weights& w) {
  w.check();
  return infer_map(g, w.ann_factor);
}

Behavior infer_behavior(const GroundingGraph& g, const Weights& w) {
  w.check();
  const auto inf = infer_map(g, w.beh_factor);
  Behavior b;
  for (int c = 0; c < static_cast<int>(g.candidates.size()); ++c) {
    b.scores.push_back({g.candidates[c], g.phrases.empty() ? 0.0 : factor_score(g, w.beh_factor, 0, c, inf.assignment)});
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& a : inf.root) {
    const Symbol& s = a.symbol;
    if (s.cls == SymbolClass::Action && a.logit > best) {
      best = a.logit;
      b.action = s.action;
      b.goal = s.figure;
      b.goal_relation = s.relation;
      b.goal_landmark = s.landmark;
    } else if (s.cls == SymbolClass::Objective) {
      b.objectives.push_back(s.objective);
    } else if (s.cls == SymbolClass::Constraint) {
      b.constraints.push_back(s);
    }
  }
  if (b.action < 0) b.action = g.space->action_index("explore");
  return b;
}

std::string describe(const SymbolSpace& space, const MapContext& map, const Behavior& b) {
  Symbol s = Symbol::act(b.action, b.goal);
  s.relation = b.goal_relation;
  s.landmark = b.goal_landmark;
  std::string out = behavior_string(space, map, s);
  for (int j : b.objectives) out += " " + space.objectives.at(j).name;
  for (const auto& c : b.constraints) out += " " + behavior_string(space, map, c);
  return out;
}

std::vector<Symbol> ground_annotations(const lang::ParseTree& tree, const SymbolSpace& space, const Weights& w) {
  const auto g = build_annotation_graph(tree, space, prune_symbols(tree, space, w));
  return symbols_of(infer_annotations(g, w).root);
}

Behavior ground_behavior(const lang::ParseTree& tree, const SymbolSpace& space, const MapContext& map,
                         const Weights& w) {
  auto g = build_behavior_graph(tree, space, map, prune_behavior_types(tree, space, w));
  if (g.candidates.size() > kMaxCandidates) {
    std::vector<Activation> inst;
    const auto types = prune_behavior_types(tree, space, w);
    const auto logits = activation_scores(tree, space, w.beh_prune, Stage::Behavior, types);
    for (const auto& s : g.candidates) {
      const Symbol t = type_level(s, map);
      double l = 0.0;
      for (const auto& a : logits) {
        if (a.symbol == t) l = a.logit;
      }
      inst.push_back({s, l});
    }
    g.candidates = symbols_of(select_active(inst));
  }
  return infer_behavior(g, w);
}

}  // namespace wayfinder::ground
