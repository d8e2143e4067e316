#include <doctest.h>

#include <functional>
#include <map>
#include <random>

#include <json.hpp>

#include "wayfinder/common.hpp"
#include "wayfinder/langparse.hpp"

using namespace wayfinder;
using namespace wayfinder::lang;

namespace {

std::vector<std::string> phrase_labels(const ParseTree& t) {
  std::vector<std::string> out;
  std::function<void(const ParseTree&)> rec = [&](const ParseTree& n) {
    if (n.is_preterminal()) return;
    out.push_back(n.label);
    for (const auto& c : n.children) rec(c);
  };
  rec(t);
  return out;
}

/// Enumerates every derivation of `label` over [i, j) without a chart.
class Enumerator {
 public:
  Enumerator(const std::vector<Token>& toks, const Grammar& g) : toks_(toks), g_(g) {}

  std::vector<DerivationPtr> all(const std::string& label, std::size_t i, std::size_t j, int budget = 12) {
    std::vector<DerivationPtr> out;
    if (budget <= 0) return out;
    if (j == i + 1) {
      auto it = g_.lexicon.find(toks_[i].text);
      if (it != g_.lexicon.end()) {
        for (const auto& e : it->second) {
          if (e.pos == label) out.push_back(make_lexical(toks_[i], e));
        }
      } else if (label == g_.unknown_pos) {
        out.push_back(make_lexical(toks_[i], {g_.unknown_pos, g_.unknown_weight}));
      }
    }
    for (std::size_t r = 0; r < g_.rules.size(); ++r) {
      const auto& rule = g_.rules[r];
      if (rule.lhs != label || rule.rhs.size() > j - i) continue;
      std::vector<std::vector<DerivationPtr>> combos;
      std::vector<DerivationPtr> cur;
      std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t k, std::size_t start) {
        if (k == rule.rhs.size()) {
          if (start == j) combos.push_back(cur);
          return;
        }
        const std::size_t left = rule.rhs.size() - k - 1;
        for (std::size_t mid = start + 1; mid + left <= j; ++mid) {
          const int next_budget = rule.rhs.size() == 1 ? budget - 1 : budget;
          for (const auto& d : all(rule.rhs[k], start, mid, next_budget)) {
            cur.push_back(d);
            rec(k + 1, mid);
            cur.pop_back();
          }
        }
      };
      rec(0, i);
      for (auto& c : combos) out.push_back(make_phrase(g_, static_cast<int>(r), c));
    }
    return out;
  }

  DerivationPtr best() {
    DerivationPtr best;
    std::size_t best_root = 0;
    for (std::size_t r = 0; r < g_.roots.size(); ++r) {
      for (const auto& d : all(g_.roots[r], 0, toks_.size())) {
        bool better = !best;
        if (!better) {
          if (d->score != best->score) {
            better = d->score > best->score;
          } else if (d->depth != best->depth) {
            better = d->depth < best->depth;
          } else if (r != best_root) {
            better = r < best_root;
          } else {
            better = compare_derivations(*d, *best) < 0;
          }
        }
        if (better) {
          best = d;
          best_root = r;
        }
      }
    }
    return best;
  }

 private:
  const std::vector<Token>& toks_;
  const Grammar& g_;
};

ParseTree random_tree(std::mt19937& rng, int depth) {
  static const std::vector<std::string> labels = {"VP", "PP", "NP", "ADVP", "S", "SBAR"};
  static const std::vector<std::string> pos = {"VB", "NN", "DT", "IN", "RB"};
  static const std::vector<std::string> words = {"go", "kitchen", "the", "past", "down", "x1", "hall"};
  ParseTree t;
  if (depth == 0 || rng() % 3 == 0) {
    t.label = pos[rng() % pos.size()];
    t.word = words[rng() % words.size()];
    return t;
  }
  t.label = labels[rng() % labels.size()];
  const int n = 1 + static_cast<int>(rng() % 3);
  for (int i = 0; i < n; ++i) t.children.push_back(random_tree(rng, depth - 1));
  return t;
}

}  // namespace

TEST_CASE("tokenize normalizes case and punctuation") {
  auto toks = tokenize("Go to the kitchen.");
  REQUIRE(toks.size() == 4);
  CHECK(toks[0].text == "go");
  CHECK(toks[3].text == "kitchen");
  for (std::size_t i = 0; i < toks.size(); ++i) CHECK(toks[i].index == i);
  CHECK(tokenize("go").size() == 1);
  CHECK(tokenize("go to the kitchen that is down the hall").size() == 9);
  CHECK_THROWS_AS(tokenize("   \t "), EmptyUtteranceError);
}

TEST_CASE("parse reproduces the relative-clause structure") {
  const auto& g = Grammar::bundled();
  auto tree = parse(tokenize("go to the kitchen that is down the hall"), g);
  const std::vector<std::string> expected = {"VP", "PP", "NP", "NP", "SBAR", "WHNP", "S", "VP", "ADVP", "NP"};
  CHECK(phrase_labels(tree) == expected);
  CHECK(tree.begin == 0);
  CHECK(tree.end == 9);
}

TEST_CASE("single verb parses to a unary VP") {
  auto tree = parse(tokenize("go"), Grammar::bundled());
  CHECK(write_bracketed(tree) == "(VP (VB go))");
}

TEST_CASE("unknown words fall back to NN") {
  auto res = parse_detailed(tokenize("go to the zorblax"), Grammar::bundled());
  CHECK(res.fallback_count == 1);
  CHECK(write_bracketed(res.tree) == "(VP (VB go) (PP (TO to) (NP (DT the) (NN zorblax))))");
}

TEST_CASE("no-parse error reports uncovered span") {
  try {
    parse(tokenize("the the the"), Grammar::bundled());
    FAIL("expected NoParseError");
  } catch (const NoParseError& e) {
    CHECK(e.end() == 3);
  }
}

TEST_CASE("bracketed reader") {
  auto t = read_bracketed("(VP (VB go))");
  CHECK(t.label == "VP");
  REQUIRE(t.children.size() == 1);
  CHECK(t.children[0].label == "VB");
  CHECK(t.children[0].word == "go");
  CHECK(t.end == 1);

  try {
    read_bracketed("(VP (VB go)");
    FAIL("expected BracketError");
  } catch (const BracketError& e) {
    CHECK(e.offset() == 11);
  }
  CHECK_THROWS_AS(read_bracketed("( (VB go))"), BracketError);
  CHECK(write_bracketed(read_bracketed("  (VP   (VB go)\n (PP (TO to) (NP (NN x))))")) ==
        "(VP (VB go) (PP (TO to) (NP (NN x))))");
}

TEST_CASE("write/read round trip on generated trees") {
  std::mt19937 rng(7);
  for (int i = 0; i < 100; ++i) {
    auto t = random_tree(rng, 4);
    const std::string s = write_bracketed(t);
    auto back = read_bracketed(s);
    CHECK(write_bracketed(back) == s);
    CHECK(read_bracketed(write_bracketed(back)) == back);
  }
}

TEST_CASE("chart parser matches exhaustive enumeration on short sentences") {
  const auto& g = Grammar::bundled();
  const std::vector<std::string> sentences = {
      "go",
      "go to the kitchen",
      "go down the hall",
      "turn left",
      "go to the kitchen down the hall",
      "go past the lab to the office",
      "go to the office near the lab",
      "go down the hall and turn left",
      "turn right into the conference room",
      "go to the elevator lobby",
      "the lab is down the hall",
  };
  std::mt19937 rng(3);
  std::vector<std::string> all = sentences;
  const std::vector<std::string> vocab = {"go", "to", "the", "kitchen", "down", "hall", "near", "lab",
                                          "past", "left", "and", "turn", "that", "is"};
  for (int i = 0; i < 400; ++i) {
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 8);
    for (int k = 0; k < n; ++k) s += (k ? " " : "") + vocab[rng() % vocab.size()];
    all.push_back(s);
  }
  int compared = 0;
  for (const auto& s : all) {
    const auto toks = tokenize(s);
    if (toks.size() > 8) continue;
    Enumerator en(toks, g);
    auto best = en.best();
    if (!best) {
      CHECK_THROWS_AS(parse(toks, g), NoParseError);
      continue;
    }
    const auto res = parse_detailed(toks, g);
    CHECK_MESSAGE(write_bracketed(res.tree) == write_bracketed(to_tree(*best)), s);
    CHECK(res.score == best->score);
    ++compared;
  }
  CHECK(compared >= 20);
}

TEST_CASE("parsing is deterministic") {
  const auto& g = Grammar::bundled();
  const auto toks = tokenize("go down the hallway and turn left into the office that is past the kitchen");
  const auto a = write_bracketed(parse(toks, g));
  for (int i = 0; i < 5; ++i) CHECK(write_bracketed(parse(toks, g)) == a);
}

TEST_CASE("bundled direction corpus parses and round trips") {
  const auto j = nlohmann::json::parse(read_file(data_path("directions.json")));
  const auto& g = Grammar::bundled();
  int n = 0;
  for (const auto& d : j.at("directions")) {
    const auto res = parse_detailed(tokenize(d.at("text").get<std::string>()), g);
    CHECK(res.fallback_count <= 2);
    const auto text = write_bracketed(res.tree);
    CHECK(read_bracketed(text) == res.tree);
    CHECK(write_bracketed(read_bracketed(text)) == text);
    ++n;
  }
  CHECK(n == 55);
}

TEST_CASE("grammar json rejects empty right-hand sides") {
  CHECK_THROWS(Grammar::from_json_text(R"({"roots":["VP"],"rules":[{"lhs":"VP","rhs":[]}],"lexicon":{}})"));
}
