#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "wayfinder/grounding.hpp"

#include "oracles.hpp"

using namespace wayfinder;
using namespace wayfinder::ground;

using namespace wayfinder::oracle;

TEST_CASE("symbol space sizes") {
  const auto& sp = SymbolSpace::bundled();
  CHECK(sp.object_types.size() == 17);
  CHECK(sp.relations.size() == 12);
  CHECK(sp.subspace_count() == 204);
  CHECK(sp.typed_relation_count() == 3264);
  CHECK(sp.total_count() == 3485);
  CHECK(sp.annotation_symbols().size() == 3485);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::size_t r = 1; r <= 4; ++r) {
      const auto s = sp.restricted(n, r);
      CHECK(s.subspace_count() == r * n);
      CHECK(s.typed_relation_count() == n * r * (n - 1));
      CHECK(s.annotation_symbols().size() == n + r * n + n * r * (n - 1));
    }
  }
}

TEST_CASE("symbol text round trip") {
  const auto& sp = SymbolSpace::bundled();
  for (const auto& s : sp.annotation_symbols()) CHECK(sp.parse_symbol(sp.to_string(s)) == s);
  CHECK(sp.to_string(Symbol::typed(sp.type_index("kitchen"), sp.relation_index("down"), sp.type_index("hallway"))) ==
        "kitchen(down(hallway))");
  CHECK_THROWS(sp.parse_symbol("kitchen(sideways(hallway))"));
}

TEST_CASE("relative clause example grounds to the kitchen down the hallway") {
  const auto& sp = SymbolSpace::bundled();
  const auto& w = default_weights();
  const auto tree = parse_text("go to the kitchen that is down the hall");
  const std::set<std::string> active = {"kitchen", "hallway", "down(hallway)", "kitchen(down(hallway))"};
  CHECK(names(sp, prune_symbols(tree, sp, w)) == active);
  const std::set<std::string> root = {"kitchen", "kitchen(down(hallway))"};
  CHECK(names(sp, ground_annotations(tree, sp, w)) == root);
}

TEST_CASE("behavior selects the kitchen that is down the hallway") {
  const auto& sp = SymbolSpace::bundled();
  const auto map = kitchen_hallway_map(sp);
  const auto b = ground_behavior(parse_text("go to the kitchen that is down the hall"), sp, map, default_weights());
  CHECK(describe(sp, map, b) == "navigate(o1)");
  CHECK(b.goal == 0);
}

TEST_CASE("goal-free commands") {
  const auto& sp = SymbolSpace::bundled();
  const auto& w = default_weights();
  const auto map = kitchen_hallway_map(sp);
  CHECK(prune_symbols(parse_text("go"), sp, w).empty());
  CHECK(describe(sp, map, ground_behavior(parse_text("go"), sp, map, w)) == "explore()");
  CHECK(describe(sp, map, ground_behavior(parse_text("stop"), sp, map, w)) == "stop()");
}

TEST_CASE("zero weights ground nothing") {
  const auto& sp = SymbolSpace::bundled();
  Weights w;
  const auto tree = parse_text("go to the kitchen that is down the hall");
  CHECK(prune_symbols(tree, sp, w).empty());
  auto g = build_annotation_graph(tree, sp, {Symbol::object(0), Symbol::object(1), Symbol::subspace(0, 1)});
  const auto inf = infer_map(g, w.ann_factor);
  CHECK(inf.root.empty());
  for (auto m : inf.assignment) CHECK(m == 0u);
}

TEST_CASE("correspondence count is phrases times candidates") {
  const auto& sp = SymbolSpace::bundled();
  const auto& corpus = bundled_corpus();
  REQUIRE(corpus.size() >= 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto active = prune_symbols(corpus[i].tree, sp, default_weights());
    const auto g = build_annotation_graph(corpus[i].tree, sp, active);
    CHECK(g.correspondence_count() == corpus[i].gold.size() * active.size());
  }
}

TEST_CASE("factorized activation equals the explicit feature dot product") {
  const auto sp = SymbolSpace::bundled().restricted(3, 2);
  std::mt19937 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (const char* text : {"go to the kitchen that is down the hall", "walk past the office to the lab",
                           "go down the hallway quickly"}) {
    const auto tree = parse_text(text);
    for (Stage stage : {Stage::Annotation, Stage::Behavior}) {
      const auto syms = stage == Stage::Annotation ? sp.annotation_symbols() : behavior_type_symbols(sp);
      FeatureMap w;
      std::vector<FeatureMap> feats;
      for (const auto& s : syms) {
        feats.push_back(prune_features(tree, sp, stage, s));
        for (const auto& [k, v] : feats.back()) {
          if (!w.count(k)) w[k] = nd(rng);
        }
      }
      const auto act = activation_scores(tree, sp, w, stage, syms);
      REQUIRE(act.size() == syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        double dot = 0.0;
        for (const auto& [k, v] : feats[i]) dot += v * w[k];
        CHECK(act[i].symbol == syms[i]);
        CHECK(act[i].logit == doctest::Approx(dot).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("tree inference matches exhaustive enumeration") {
  const auto sp = SymbolSpace::bundled().restricted(2, 1);
  const auto all = sp.annotation_symbols();
  std::mt19937 rng(5);
  const std::vector<std::string> texts = {"go", "stop", "go to the kitchen", "go down the hallway",
                                          "go to the hallway"};
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto tree = parse_text(texts[trial % texts.size()]);
    std::vector<Symbol> cands = all;
    std::shuffle(cands.begin(), cands.end(), rng);
    const auto np = phrases_of(tree).size();
    cands.resize(np >= 3 ? 3 : 4);
    auto g = build_annotation_graph(tree, sp, cands);
    const auto w = random_weights(g, rng);
    double ex_score = 0.0;
    const auto ex = exhaustive_map(g, w, &ex_score);
    const auto inf = infer_map(g, w);
    CHECK(inf.score == doctest::Approx(ex_score).epsilon(1e-9));
    CHECK(inf.assignment == ex);
    CHECK(assignment_score(g, w, inf.assignment) == doctest::Approx(inf.score).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("behavior inference matches exhaustive enumeration on small maps") {
  const auto sp = SymbolSpace::bundled().restricted(2, 1);
  std::mt19937 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    MapContext map;
    const int nobj = 1 + trial % 3;
    for (int i = 0; i < nobj; ++i) map.objects.push_back({i + 1, static_cast<int>(rng() % 2)});
    const double sup = (rng() % 2) ? 1.0 : 0.0;
    map.relation_support = [sup](int, int, int) { return sup; };
    const auto tree = parse_text(trial % 2 ? "go to the kitchen" : "go down the hallway");
    auto g = build_behavior_graph(tree, sp, map, behavior_type_symbols(sp));
    std::shuffle(g.candidates.begin(), g.candidates.end(), rng);
    g.candidates.resize(3);
    const auto w = random_weights(g, rng);
    double ex_score = 0.0;
    const auto ex = exhaustive_map(g, w, &ex_score);
    const auto inf = infer_map(g, w);
    CHECK(inf.score == doctest::Approx(ex_score).epsilon(1e-9));
    CHECK(inf.assignment == ex);
  }
}

TEST_CASE("behavior candidate count over a map") {
  const auto& sp = SymbolSpace::bundled();
  const auto map = kitchen_hallway_map(sp);
  const std::size_t o = map.objects.size(), r = sp.relations.size();
  const std::size_t a = sp.actions.size(), j = sp.objectives.size();
  const std::size_t subspaces = r * o;
  const std::size_t expected = o + subspaces + a * (o + subspaces) + 2 + j + subspaces;
  const auto g = build_behavior_graph(parse_text("go"), sp, map, behavior_type_symbols(sp));
  CHECK(g.candidates.size() == expected);
  CHECK(g.correspondence_count() == g.phrases.size() * expected);
}

TEST_CASE("inference is invariant to candidate order") {
  const auto sp = SymbolSpace::bundled().restricted(3, 2);
  std::mt19937 rng(21);
  const auto tree = parse_text("go to the kitchen that is down the hall");
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Symbol> cands = sp.annotation_symbols();
    std::shuffle(cands.begin(), cands.end(), rng);
    cands.resize(5);
    auto g = build_annotation_graph(tree, sp, cands);
    const auto w = random_weights(g, rng);
    const auto base = infer_map(g, w);
    std::vector<Symbol> root0;
    for (const auto& x : base.root) root0.push_back(x.symbol);
    std::sort(root0.begin(), root0.end());
    std::shuffle(g.candidates.begin(), g.candidates.end(), rng);
    const auto perm = infer_map(g, w);
    std::vector<Symbol> root1;
    for (const auto& x : perm.root) root1.push_back(x.symbol);
    std::sort(root1.begin(), root1.end());
    CHECK(root0 == root1);
    CHECK(perm.score == doctest::Approx(base.score).epsilon(1e-9));
  }
}

TEST_CASE("inference rejects oversized candidate lists") {
  const auto& sp = SymbolSpace::bundled();
  const auto all = sp.annotation_symbols();
  auto g = build_annotation_graph(parse_text("go"), sp, {all.begin(), all.begin() + kMaxCandidates + 1});
  CHECK_THROWS_AS(infer_map(g, FeatureMap{}), std::invalid_argument);
}

TEST_CASE("training fits the corpus") {
  const auto& sp = SymbolSpace::bundled();
  TrainReport rep;
  train_weights(bundled_corpus(), sp, {}, &rep);
  CHECK(rep.prune_recall >= 0.95);
  CHECK(rep.root_accuracy >= 0.9);
  CHECK(rep.behavior_accuracy >= 0.9);
}

TEST_CASE("a single example is memorized") {
  const auto& sp = SymbolSpace::bundled();
  const auto& corpus = bundled_corpus();
  const auto it = std::find_if(corpus.begin(), corpus.end(),
                               [](const LabeledExample& e) { return e.text == "go past the lab to the office"; });
  const LabeledExample& ex = it != corpus.end() ? *it : corpus.front();
  TrainReport rep;
  const auto w = train_weights({ex}, sp, {}, &rep);
  CHECK(rep.root_accuracy == 1.0);
  CHECK(names(sp, ground_annotations(ex.tree, sp, w)) == names(sp, ex.gold.front()));
}

TEST_CASE("fixed-step ascent is monotone") {
  std::mt19937 rng(2);
  std::normal_distribution<double> nd(0.0, 1.0);
  LogisticProblem p;
  p.dim = 8;
  for (int b = 0; b < 30; ++b) {
    SparseVec v;
    for (int k = 0; k < p.dim; ++k) {
      if (rng() % 3 == 0) {
        v.idx.push_back(k);
        v.val.push_back(nd(rng));
      }
    }
    p.buckets.push_back(v);
    LogisticProblem::Instance in;
    in.bias = 0;
    in.buckets = {b};
    in.label = rng() % 2;
    in.weight = 1.0 + (rng() % 3);
    p.instances.push_back(in);
  }
  TrainConfig cfg;
  cfg.adaptive = false;
  cfg.epochs = 60;
  cfg.l2 = 1e-2;
  std::vector<double> w(p.dim, 0.0);
  const auto trace = fit_logistic(p, w, cfg);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-12);
  CHECK(logistic_objective(p, w, cfg.l2) == doctest::Approx(trace.back()).epsilon(1e-9));

  cfg.adaptive = true;
  std::vector<double> w2(p.dim, 0.0);
  const auto trace2 = fit_logistic(p, w2, cfg);
  CHECK(trace2.back() >= trace.back() - 1e-9);
}

TEST_CASE("weights reject a different template id") {
  Weights w;
  w.template_id = "grounding-templates/0";
  CHECK_THROWS_AS(w.check(), DimensionMismatchError);
  CHECK_THROWS_AS(prune_symbols(parse_text("go"), SymbolSpace::bundled(), w), DimensionMismatchError);
  const auto back = Weights::from_json_text(w.to_json());
  CHECK_THROWS_AS(back.check(), DimensionMismatchError);
}

TEST_CASE("weights json round trip") {
  const auto& w = default_weights();
  const auto back = Weights::from_json_text(w.to_json());
  CHECK(back.template_id == w.template_id);
  CHECK(back.ann_prune == w.ann_prune);
  CHECK(back.ann_factor == w.ann_factor);
  CHECK(back.beh_prune == w.beh_prune);
  CHECK(back.beh_factor == w.beh_factor);
}
