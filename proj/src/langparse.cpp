#include "wayfinder/langparse.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>

#include <json.hpp>

#include "wayfinder/common.hpp"

namespace wayfinder::lang {

using nlohmann::json;

Grammar Grammar::from_json_text(std::string_view text) {
  const json j = json::parse(text);
  Grammar g;
  g.roots = j.at("roots").get<std::vector<std::string>>();
  for (const auto& r : j.at("rules")) {
    Rule rule{r.at("lhs").get<std::string>(), r.at("rhs").get<std::vector<std::string>>(),
              r.value("weight", 0.0)};
    if (rule.rhs.empty()) throw std::invalid_argument("rule for " + rule.lhs + " has empty rhs");
    g.rules.push_back(std::move(rule));
  }
  for (const auto& [word, entries] : j.at("lexicon").items()) {
    for (const auto& e : entries) {
      g.lexicon[word].push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
    }
  }
  g.unknown_pos = j.value("unknown_pos", std::string("NN"));
  g.unknown_weight = j.value("unknown_weight", -3.0);
  return g;
}

Grammar Grammar::load(const std::string& path) { return from_json_text(read_file(path)); }

const Grammar& Grammar::bundled() {
  static const Grammar g = load(data_path("grammar.json"));
  return g;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back({cur, out.size()});
      cur.clear();
    }
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  if (out.empty()) throw EmptyUtteranceError();
  return out;
}

int compare_derivations(const Derivation& a, const Derivation& b) {
  if (a.score != b.score) return a.score > b.score ? -1 : 1;
  if (a.depth != b.depth) return a.depth < b.depth ? -1 : 1;
  if (a.rule != b.rule) return a.rule < b.rule ? -1 : 1;
  if (a.rule == Derivation::kLexical) {
    if (a.label != b.label) return a.label < b.label ? -1 : 1;
    return 0;
  }
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (a.children[i]->begin != b.children[i]->begin) {
      return a.children[i]->begin < b.children[i]->begin ? -1 : 1;
    }
  }
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (int c = compare_derivations(*a.children[i], *b.children[i]); c != 0) return c;
  }
  return 0;
}

DerivationPtr make_lexical(const Token& tok, const LexEntry& entry) {
  auto d = std::make_shared<Derivation>();
  d->label = entry.pos;
  d->word = tok.text;
  d->score = entry.weight;
  d->depth = 1;
  d->begin = tok.index;
  d->end = tok.index + 1;
  return d;
}

DerivationPtr make_phrase(const Grammar& g, int rule, std::vector<DerivationPtr> children) {
  auto d = std::make_shared<Derivation>();
  d->label = g.rules[rule].lhs;
  d->rule = rule;
  d->score = g.rules[rule].weight;
  int depth = 0;
  for (const auto& c : children) {
    d->score += c->score;
    depth = std::max(depth, c->depth);
  }
  d->depth = depth + 1;
  d->begin = children.front()->begin;
  d->end = children.back()->end;
  d->children = std::move(children);
  return d;
}

ParseTree to_tree(const Derivation& d) {
  ParseTree t;
  t.label = d.label;
  t.word = d.word;
  t.begin = d.begin;
  t.end = d.end;
  for (const auto& c : d.children) t.children.push_back(to_tree(*c));
  return t;
}

namespace {

/// Pareto frontier over (depth, score): kept sorted by depth, with strictly
/// increasing score. An entry with lower depth and equal or better score
/// always ranks before any deeper one at every ancestor, so only the frontier
/// can contribute to the optimum.
using Frontier = std::vector<DerivationPtr>;

bool insert_frontier(Frontier& f, DerivationPtr cand) {
  for (const auto& e : f) {
    if (e->depth <= cand->depth && e->score >= cand->score) {
      if (e->depth == cand->depth && e->score == cand->score) {
        if (compare_derivations(*cand, *e) < 0) {
          // same key but structurally earlier: replace in place
          auto it = std::find(f.begin(), f.end(), e);
          *it = std::move(cand);
          return true;
        }
      }
      return false;
    }
  }
  std::erase_if(f, [&](const DerivationPtr& e) {
    return cand->depth <= e->depth && cand->score >= e->score;
  });
  auto pos = std::lower_bound(f.begin(), f.end(), cand,
                              [](const DerivationPtr& a, const DerivationPtr& b) {
                                return a->depth < b->depth;
                              });
  f.insert(pos, std::move(cand));
  return true;
}

class Chart {
 public:
  Chart(const std::vector<Token>& tokens, const Grammar& g) : toks_(tokens), g_(g), n_(tokens.size()) {
    for (std::size_t r = 0; r < g.rules.size(); ++r) {
      const auto& rule = g.rules[r];
      if (rule.rhs.size() == 1) {
        unary_.push_back(static_cast<int>(r));
      } else {
        nary_.push_back(static_cast<int>(r));
      }
    }
  }

  int fallback_count = 0;

  void fill() {
    for (std::size_t i = 0; i < n_; ++i) {
      auto& cell = cells_[key(i, i + 1)];
      auto it = g_.lexicon.find(toks_[i].text);
      if (it != g_.lexicon.end()) {
        for (const auto& e : it->second) insert_frontier(cell[e.pos], make_lexical(toks_[i], e));
      } else {
        ++fallback_count;
        insert_frontier(cell[g_.unknown_pos], make_lexical(toks_[i], {g_.unknown_pos, g_.unknown_weight}));
      }
      close_unary(i, i + 1);
    }
    for (std::size_t len = 2; len <= n_; ++len) {
      for (std::size_t i = 0; i + len <= n_; ++i) {
        const std::size_t j = i + len;
        for (int r : nary_) expand(r, i, j);
        close_unary(i, j);
      }
    }
  }

  const Frontier* get(std::size_t i, std::size_t j, const std::string& label) const {
    auto c = cells_.find(key(i, j));
    if (c == cells_.end()) return nullptr;
    auto f = c->second.find(label);
    return f == c->second.end() || f->second.empty() ? nullptr : &f->second;
  }

 private:
  std::size_t key(std::size_t i, std::size_t j) const { return i * (n_ + 1) + j; }

  void close_unary(std::size_t i, std::size_t j) {
    // bounded by the label count; the bundled grammar has no unary cycles
    for (std::size_t pass = 0; pass <= g_.rules.size(); ++pass) {
      bool changed = false;
      for (int r : unary_) {
        const auto* src = get(i, j, g_.rules[r].rhs[0]);
        if (!src) continue;
        const Frontier copy = *src;
        for (const auto& child : copy) {
          changed |= insert_frontier(cells_[key(i, j)][g_.rules[r].lhs], make_phrase(g_, r, {child}));
        }
      }
      if (!changed) break;
    }
  }

  void expand(int r, std::size_t i, std::size_t j) {
    const auto& rhs = g_.rules[r].rhs;
    if (j - i < rhs.size()) return;
    std::vector<DerivationPtr> picked;
    picked.reserve(rhs.size());
    walk(r, 0, i, j, picked);
  }

  void walk(int r, std::size_t child, std::size_t start, std::size_t j, std::vector<DerivationPtr>& picked) {
    const auto& rhs = g_.rules[r].rhs;
    const std::size_t remaining = rhs.size() - child;
    if (remaining == 1) {
      const auto* f = get(start, j, rhs[child]);
      if (!f) return;
      for (const auto& d : *f) {
        picked.push_back(d);
        insert_frontier(cells_[key(picked.front()->begin, j)][g_.rules[r].lhs], make_phrase(g_, r, picked));
        picked.pop_back();
      }
      return;
    }
    for (std::size_t mid = start + 1; mid + remaining - 1 <= j; ++mid) {
      const auto* f = get(start, mid, rhs[child]);
      if (!f) continue;
      for (const auto& d : *f) {
        picked.push_back(d);
        walk(r, child + 1, mid, j, picked);
        picked.pop_back();
      }
    }
  }

  const std::vector<Token>& toks_;
  const Grammar& g_;
  std::size_t n_;
  std::vector<int> unary_;
  std::vector<int> nary_;
  std::unordered_map<std::size_t, std::map<std::string, Frontier>> cells_;
};

}  // namespace

ParseResult parse_detailed(const std::vector<Token>& tokens, const Grammar& grammar) {
  if (tokens.empty()) throw EmptyUtteranceError();
  Chart chart(tokens, grammar);
  chart.fill();
  DerivationPtr best;
  std::size_t best_root = 0;
  for (std::size_t r = 0; r < grammar.roots.size(); ++r) {
    const auto* f = chart.get(0, tokens.size(), grammar.roots[r]);
    if (!f) continue;
    for (const auto& d : *f) {
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
  if (!best) {
    // report the first token whose single-token cell is empty, else the longest uncovered prefix
    std::size_t covered = 0;
    for (std::size_t j = tokens.size(); j > 0; --j) {
      bool any = false;
      for (const auto& r : grammar.roots) any |= chart.get(0, j, r) != nullptr;
      if (any) {
        covered = j;
        break;
      }
    }
    throw NoParseError(covered, tokens.size(),
                       "no parse: tokens [" + std::to_string(covered) + ", " + std::to_string(tokens.size()) +
                           ") are not covered by any root constituent");
  }
  return {to_tree(*best), best->score, best->depth, chart.fallback_count};
}

ParseTree parse(const std::vector<Token>& tokens, const Grammar& grammar) {
  return parse_detailed(tokens, grammar).tree;
}

namespace {

class BracketReader {
 public:
  explicit BracketReader(std::string_view s) : s_(s) {}

  ParseTree read_all() {
    skip_ws();
    ParseTree t = read_node();
    skip_ws();
    if (pos_ != s_.size()) throw BracketError(pos_, "trailing characters");
    assign_spans(t, 0);
    return t;
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  std::string read_atom() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != '(' && s_[pos_] != ')' &&
           !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      ++pos_;
    }
    return std::string(s_.substr(start, pos_ - start));
  }

  ParseTree read_node() {
    if (pos_ >= s_.size() || s_[pos_] != '(') throw BracketError(pos_, "expected '('");
    ++pos_;
    skip_ws();
    ParseTree t;
    t.label = read_atom();
    if (t.label.empty()) throw BracketError(pos_, "empty label");
    skip_ws();
    if (pos_ >= s_.size()) throw BracketError(pos_, "unbalanced parentheses");
    if (s_[pos_] != '(') {
      t.word = read_atom();
      if (t.word.empty()) throw BracketError(pos_, "expected word or subtree");
      skip_ws();
    } else {
      while (pos_ < s_.size() && s_[pos_] == '(') {
        t.children.push_back(read_node());
        skip_ws();
      }
    }
    if (pos_ >= s_.size()) throw BracketError(pos_, "unbalanced parentheses");
    if (s_[pos_] != ')') throw BracketError(pos_, "expected ')'");
    ++pos_;
    return t;
  }

  static std::size_t assign_spans(ParseTree& t, std::size_t begin) {
    t.begin = begin;
    if (t.is_preterminal()) {
      t.end = begin + 1;
      return t.end;
    }
    std::size_t cur = begin;
    for (auto& c : t.children) cur = assign_spans(c, cur);
    t.end = cur;
    return cur;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

void write_into(const ParseTree& t, std::string& out) {
  out += '(';
  out += t.label;
  if (t.is_preterminal()) {
    out += ' ';
    out += t.word;
  } else {
    for (const auto& c : t.children) {
      out += ' ';
      write_into(c, out);
    }
  }
  out += ')';
}

void collect_leaves(const ParseTree& t, std::vector<std::string>& out) {
  if (t.is_preterminal()) {
    out.push_back(t.word);
    return;
  }
  for (const auto& c : t.children) collect_leaves(c, out);
}

}  // namespace

ParseTree read_bracketed(std::string_view text) { return BracketReader(text).read_all(); }

std::string write_bracketed(const ParseTree& tree) {
  std::string out;
  write_into(tree, out);
  return out;
}

std::vector<std::string> leaves(const ParseTree& tree) {
  std::vector<std::string> out;
  collect_leaves(tree, out);
  return out;
}

}  // namespace wayfinder::lang
