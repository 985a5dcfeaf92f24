#include "genrec/trie.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "genrec/errors.hpp"

namespace genrec {

namespace {

std::string prefix_str(std::span<const int> prefix) {
  std::string s = "[";
  for (size_t i = 0; i < prefix.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(prefix[i]);
  }
  return s + "]";
}

}  // namespace

CodeTrie CodeTrie::build(
    const std::map<int64_t, std::vector<int>>& sequences) {
  CodeTrie t;
  if (sequences.empty()) return t;
  t.depth_ = static_cast<int>(sequences.begin()->second.size());
  t.nodes_.emplace_back();
  for (const auto& [item, seq] : sequences) {
    if (static_cast<int>(seq.size()) != t.depth_)
      throw DimensionMismatch("sequence length " +
                              std::to_string(seq.size()) + " vs trie depth " +
                              std::to_string(t.depth_));
    int node = 0;
    for (int code : seq) {
      auto it = t.nodes_[node].kids.find(code);
      if (it == t.nodes_[node].kids.end()) {
        int next = static_cast<int>(t.nodes_.size());
        t.nodes_[node].kids.emplace(code, next);
        t.nodes_.emplace_back();
        node = next;
      } else {
        node = it->second;
      }
    }
    if (t.nodes_[node].item >= 0)
      throw DuplicateSequence("items " + std::to_string(t.nodes_[node].item) +
                              " and " + std::to_string(item) +
                              " share code sequence " + prefix_str(seq));
    t.nodes_[node].item = item;
    t.leaves_ += 1;
  }
  return t;
}

int CodeTrie::step(int node, int code) const {
  auto it = nodes_[node].kids.find(code);
  return it == nodes_[node].kids.end() ? -1 : it->second;
}

int CodeTrie::walk(std::span<const int> prefix) const {
  if (empty()) throw UnknownPrefix("empty trie");
  if (static_cast<int>(prefix.size()) > depth_)
    throw UnknownPrefix("prefix longer than trie depth");
  int node = 0;
  for (int code : prefix) {
    node = step(node, code);
    if (node < 0) throw UnknownPrefix(prefix_str(prefix));
  }
  return node;
}

std::vector<int> CodeTrie::children(std::span<const int> prefix) const {
  int node = walk(prefix);
  std::vector<int> out;
  out.reserve(nodes_[node].kids.size());
  for (const auto& [code, _] : nodes_[node].kids) out.push_back(code);
  return out;
}

int64_t CodeTrie::leaf_to_item(std::span<const int> codes) const {
  if (static_cast<int>(codes.size()) != depth_)
    throw UnknownPrefix("expected a full-depth code sequence");
  int node = walk(codes);
  if (nodes_[node].item < 0) throw UnknownPrefix(prefix_str(codes));
  return nodes_[node].item;
}

Tensor constrained_nll(const Tensor& logits, std::span<const int> prefix,
                       int gold, const CodeTrie& trie) {
  std::vector<int> kids = trie.children(prefix);
  if (std::find(kids.begin(), kids.end(), gold) == kids.end())
    throw GoldNotPermissible("gold code " + std::to_string(gold) +
                             " not permissible after " + prefix_str(prefix));
  Tensor lp = masked_log_softmax(logits, kids);
  return negate(pick(lp, gold));
}

namespace {

struct BeamState {
  std::vector<int> codes;
  double score = 0.0;
  int node = 0;
};

bool beam_less(const BeamState& a, const BeamState& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.codes < b.codes;
}

// Log-softmax over the children only; plain doubles, no tape involvement.
std::vector<double> child_log_probs(std::span<const double> scores,
                                    const std::vector<int>& kids) {
  double m = -std::numeric_limits<double>::infinity();
  for (int c : kids) {
    if (c < 0 || c >= static_cast<int>(scores.size()))
      throw IndexOutOfRange("beam step score vector too short for code " +
                            std::to_string(c));
    m = std::max(m, scores[c]);
  }
  double z = 0.0;
  for (int c : kids) z += std::exp(scores[c] - m);
  double lse = m + std::log(z);
  std::vector<double> out(kids.size());
  for (size_t i = 0; i < kids.size(); ++i) out[i] = scores[kids[i]] - lse;
  return out;
}

}  // namespace

std::vector<ScoredItem> constrained_beam_search(const StepFn& step_fn,
                                                const CodeTrie& trie,
                                                int width) {
  if (width < 1) throw ConfigError("beam width must be positive");
  std::vector<ScoredItem> out;
  if (trie.empty()) return out;

  std::vector<BeamState> beams{{{}, 0.0, trie.root()}};
  for (int level = 0; level < trie.depth(); ++level) {
    std::vector<BeamState> next;
    for (const BeamState& b : beams) {
      std::vector<int> kids;
      kids.reserve(trie.node_children(b.node).size());
      for (const auto& [code, _] : trie.node_children(b.node))
        kids.push_back(code);
      std::vector<double> scores = step_fn(b.codes);
      std::vector<double> lp = child_log_probs(scores, kids);
      for (size_t i = 0; i < kids.size(); ++i) {
        BeamState nb;
        nb.codes = b.codes;
        nb.codes.push_back(kids[i]);
        nb.score = b.score + lp[i];
        nb.node = trie.step(b.node, kids[i]);
        next.push_back(std::move(nb));
      }
    }
    std::sort(next.begin(), next.end(), beam_less);
    if (static_cast<int>(next.size()) > width) next.resize(width);
    beams = std::move(next);
  }

  out.reserve(beams.size());
  for (const BeamState& b : beams) {
    ScoredItem si;
    si.item = trie.node_item(b.node);
    si.score = b.score;
    si.codes = b.codes;
    out.push_back(std::move(si));
  }
  return out;
}

}  // namespace genrec
