#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wayfinder::lang {

struct Token {
  std::string text;
  std::size_t index = 0;
};

/// Constituency tree. Preterminals carry exactly one word; spans are
/// half-open token ranges [begin, end).
struct ParseTree {
  std::string label;
  std::string word;
  std::vector<ParseTree> children;
  std::size_t begin = 0;
  std::size_t end = 0;

  bool is_preterminal() const { return !word.empty(); }
  bool operator==(const ParseTree& other) const = default;
};

struct Rule {
  std::string lhs;
  std::vector<std::string> rhs;
  double weight = 0.0;
};

struct LexEntry {
  std::string pos;
  double weight = 0.0;
};

struct Grammar {
  std::vector<std::string> roots;
  std::vector<Rule> rules;
  std::map<std::string, std::vector<LexEntry>> lexicon;
  std::string unknown_pos = "NN";
  double unknown_weight = -3.0;

  static Grammar from_json_text(std::string_view text);
  static Grammar load(const std::string& path);
  /// Grammar bundled under data/grammar.json.
  static const Grammar& bundled();
};

class EmptyUtteranceError : public std::invalid_argument {
 public:
  EmptyUtteranceError() : std::invalid_argument("empty utterance") {}
};

class NoParseError : public std::runtime_error {
 public:
  NoParseError(std::size_t begin, std::size_t end, const std::string& msg)
      : std::runtime_error(msg), begin_(begin), end_(end) {}
  std::size_t begin() const { return begin_; }
  std::size_t end() const { return end_; }

 private:
  std::size_t begin_;
  std::size_t end_;
};

class BracketError : public std::runtime_error {
 public:
  BracketError(std::size_t offset, const std::string& msg)
      : std::runtime_error(msg + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::vector<Token> tokenize(std::string_view text);

/// Derivation node used by the chart. Exposed so tests can enumerate parses
/// independently and rank them with the same ordering.
struct Derivation {
  static constexpr int kLexical = -1;

  std::string label;
  int rule = kLexical;
  std::string word;
  double score = 0.0;
  int depth = 1;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::shared_ptr<const Derivation>> children;
};
using DerivationPtr = std::shared_ptr<const Derivation>;

/// Total order over derivations of the same span: higher score first, then
/// lower depth, then smaller rule index, then earlier child boundaries, then
/// children compared left to right. Returns <0 when a ranks before b.
int compare_derivations(const Derivation& a, const Derivation& b);

DerivationPtr make_lexical(const Token& tok, const LexEntry& entry);
DerivationPtr make_phrase(const Grammar& g, int rule, std::vector<DerivationPtr> children);

ParseTree to_tree(const Derivation& d);

struct ParseResult {
  ParseTree tree;
  double score = 0.0;
  int depth = 0;
  int fallback_count = 0;
};

ParseResult parse_detailed(const std::vector<Token>& tokens, const Grammar& grammar);
ParseTree parse(const std::vector<Token>& tokens, const Grammar& grammar);

ParseTree read_bracketed(std::string_view text);
std::string write_bracketed(const ParseTree& tree);

/// Words of the utterance in order.
std::vector<std::string> leaves(const ParseTree& tree);

}  // namespace wayfinder::lang
