#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "genrec/tensor.hpp"

namespace genrec {

// Prefix tree over all observed target-modality code sequences. Immutable
// after build; lookups and beam searches may run concurrently.
class CodeTrie {
 public:
  static CodeTrie build(const std::map<int64_t, std::vector<int>>& sequences);

  bool empty() const { return nodes_.empty(); }
  int depth() const { return depth_; }
  size_t leaf_count() const { return leaves_; }

  std::vector<int> children(std::span<const int> prefix) const;
  int64_t leaf_to_item(std::span<const int> codes) const;

  // Node-handle navigation used by the beam search.
  int root() const { return empty() ? -1 : 0; }
  int step(int node, int code) const;  // -1 when no such child
  const std::map<int, int>& node_children(int node) const {
    return nodes_[node].kids;
  }
  int64_t node_item(int node) const { return nodes_[node].item; }

 private:
  struct Node {
    std::map<int, int> kids;  // code -> node index, ordered by code
    int64_t item = -1;
  };
  std::vector<Node> nodes_;
  int depth_ = 0;
  size_t leaves_ = 0;

  int walk(std::span<const int> prefix) const;
};

// Softmax restricted to the permissible children of the prefix node:
// -z_gold + log sum over children of exp(z).
Tensor constrained_nll(const Tensor& logits, std::span<const int> prefix,
                       int gold, const CodeTrie& trie);

struct ScoredItem {
  int64_t item = 0;
  double score = 0.0;         // joint log-probability over all levels
  std::vector<int> codes;
};

// step_fn maps a code prefix to raw scores over the next level's code space.
using StepFn = std::function<std::vector<double>(std::span<const int>)>;

// Beam expansion over depth() steps, scored with the constrained log-softmax.
// Ties break toward the lexicographically smaller prefix.
std::vector<ScoredItem> constrained_beam_search(const StepFn& step_fn,
                                                const CodeTrie& trie,
                                                int width);

}  // namespace genrec
