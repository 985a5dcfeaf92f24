#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "genrec/gradcheck.hpp"
#include "genrec/trie.hpp"
#include "support/oracles.hpp"

using namespace genrec;

namespace {

std::map<int64_t, std::vector<int>> random_sequences(int n, int depth,
                                                     int vocab,
                                                     uint64_t seed) {
  Rng rng = make_rng(seed, "seqs");
  std::set<std::vector<int>> dedup;
  while (static_cast<int>(dedup.size()) < n) {
    std::vector<int> seq(depth);
    for (int& c : seq) c = static_cast<int>(uniform_int(rng, vocab));
    dedup.insert(seq);
  }
  std::map<int64_t, std::vector<int>> out;
  int64_t id = 0;
  for (const auto& s : dedup) out.emplace(id++, s);
  return out;
}

StepFn random_step_fn(int vocab, uint64_t seed) {
  // Scores depend deterministically on the prefix so repeated calls agree.
  return [vocab, seed](std::span<const int> prefix) {
    uint64_t h = seed;
    for (int c : prefix) h = splitmix64(h ^ static_cast<uint64_t>(c + 1));
    Rng rng(h);
    std::vector<double> scores(vocab);
    for (double& s : scores) s = 3.0 * normal(rng);
    return scores;
  };
}

}  // namespace

TEST_SUITE("code-trie") {

TEST_CASE("single item builds a single path") {
  std::map<int64_t, std::vector<int>> seqs = {{42, {1, 2, 3}}};
  CodeTrie t = CodeTrie::build(seqs);
  CHECK(t.depth() == 3);
  CHECK(t.leaf_count() == 1);
  CHECK(t.children({}) == std::vector<int>{1});
  std::vector<int> p1 = {1};
  CHECK(t.children(p1) == std::vector<int>{2});
  CHECK(t.leaf_to_item(std::vector<int>{1, 2, 3}) == 42);
}

TEST_CASE("shared prefixes merge") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0, 1}}, {2, {0, 2}}};
  CodeTrie t = CodeTrie::build(seqs);
  CHECK(t.children({}) == std::vector<int>{0});
  std::vector<int> p = {0};
  CHECK(t.children(p) == std::vector<int>{1, 2});
}

TEST_CASE("duplicate sequences are rejected") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0, 1}}, {2, {0, 1}}};
  CHECK_THROWS_AS(CodeTrie::build(seqs), DuplicateSequence);
}

TEST_CASE("mismatched depths are rejected") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0, 1}}, {2, {0, 1, 2}}};
  CHECK_THROWS_AS(CodeTrie::build(seqs), DimensionMismatch);
}

TEST_CASE("thousand random sequences match a set oracle") {
  auto seqs = random_sequences(1000, 4, 8, 99);
  CodeTrie t = CodeTrie::build(seqs);
  CHECK(t.leaf_count() == 1000);
  for (const auto& [item, seq] : seqs) CHECK(t.leaf_to_item(seq) == item);

  // Children match a linear scan of the raw list for sampled prefixes.
  Rng rng = make_rng(1, "probe");
  for (int trial = 0; trial < 50; ++trial) {
    const auto& seq =
        std::next(seqs.begin(), uniform_int(rng, 1000))->second;
    size_t plen = static_cast<size_t>(uniform_int(rng, 4));
    std::span<const int> prefix(seq.data(), plen);
    std::set<int> expect;
    for (const auto& entry : seqs)
      if (std::equal(prefix.begin(), prefix.end(), entry.second.begin()))
        expect.insert(entry.second[plen]);
    std::vector<int> got = t.children(prefix);
    CHECK(std::vector<int>(expect.begin(), expect.end()) == got);
  }
}

TEST_CASE("unknown prefixes and truncated paths error") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0, 1, 2}}};
  CodeTrie t = CodeTrie::build(seqs);
  CHECK_THROWS_AS(t.children(std::vector<int>{5}), UnknownPrefix);
  CHECK_THROWS_AS(t.leaf_to_item(std::vector<int>{0, 1}), UnknownPrefix);
  CHECK_THROWS_AS(t.leaf_to_item(std::vector<int>{0, 1, 3}), UnknownPrefix);
  CHECK(t.children(std::vector<int>{0, 1, 2}).empty());
}

TEST_CASE("full-depth children set is empty at a leaf") {
  std::map<int64_t, std::vector<int>> seqs = {{7, {3, 1}}};
  CodeTrie t = CodeTrie::build(seqs);
  CHECK(t.children(std::vector<int>{3, 1}).empty());
}

TEST_CASE("constrained nll on a two-way tie is ln 2") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {3}}, {2, {7}}};
  CodeTrie t = CodeTrie::build(seqs);
  Tensor logits = Tensor::from_data({1, 8}, {0, 0, 0, 1.5, 0, 0, 0, 1.5});
  Tensor loss = constrained_nll(logits, {}, 3, t);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("single child gives exactly zero loss") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {2, 5}}};
  CodeTrie t = CodeTrie::build(seqs);
  Tensor logits = Tensor::from_data({1, 8}, {9, -4, 17, 0.3, 0, 0, 0, 0});
  CHECK(constrained_nll(logits, {}, 2, t).item() == 0.0);
  std::vector<int> prefix = {2};
  Tensor l2 = Tensor::from_data({1, 8}, {1, 2, 3, 4, 5, -123.0, 6, 7});
  CHECK(constrained_nll(l2, prefix, 5, t).item() == 0.0);
}

TEST_CASE("non-permissible logits cannot move the loss") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0}}, {2, {2}}, {3, {5}}};
  CodeTrie t = CodeTrie::build(seqs);
  std::vector<double> base = {0.4, 1.0, -0.7, 2.0, 3.0, 0.1, -9.0, 0.0};
  double ref = constrained_nll(Tensor::from_data({1, 8}, base), {}, 2, t)
                   .item();
  for (int j : {1, 3, 4, 6, 7}) {
    for (double delta : {10.0, -10.0}) {
      std::vector<double> perturbed = base;
      perturbed[j] += delta;
      double got =
          constrained_nll(Tensor::from_data({1, 8}, perturbed), {}, 2, t)
              .item();
      CHECK(std::abs(got - ref) < 1e-12);
    }
  }
}

TEST_CASE("gold outside the children set is refused") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0}}, {2, {2}}};
  CodeTrie t = CodeTrie::build(seqs);
  Tensor logits = Tensor::from_data({1, 4}, {0, 0, 0, 0});
  CHECK_THROWS_AS(constrained_nll(logits, {}, 1, t), GoldNotPermissible);
}

TEST_CASE("constrained nll gradient matches central differences") {
  std::map<int64_t, std::vector<int>> seqs = {{1, {0}}, {2, {2}}, {3, {3}}};
  CodeTrie t = CodeTrie::build(seqs);
  double err = grad_check(
      [&](const Tensor& x) { return constrained_nll(x, {}, 2, t); },
      Tensor::from_data({1, 4}, {0.3, -1.0, 0.9, 0.2}));
  CHECK(err < 1e-6);
}

TEST_CASE("single-item trie beams to that item with score zero") {
  std::map<int64_t, std::vector<int>> seqs = {{11, {4, 0, 2}}};
  CodeTrie t = CodeTrie::build(seqs);
  auto out = constrained_beam_search(random_step_fn(8, 5), t, 3);
  REQUIRE(out.size() == 1);
  CHECK(out[0].item == 11);
  CHECK(out[0].score == 0.0);
  CHECK(out[0].codes == std::vector<int>{4, 0, 2});
}

TEST_CASE("wide beam equals exhaustive enumeration") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto seqs = random_sequences(40, 3, 6, seed);
    CodeTrie t = CodeTrie::build(seqs);
    StepFn fn = random_step_fn(6, seed * 1000 + 7);
    auto beam = constrained_beam_search(fn, t, 64);
    auto oracle = testsupport::enumerate_leaf_scores(seqs, fn);
    REQUIRE(beam.size() == oracle.size());
    for (size_t i = 0; i < beam.size(); ++i) {
      CHECK(beam[i].item == oracle[i].item);
      CHECK(std::abs(beam[i].score - oracle[i].score) < 1e-10);
    }
  }
}

TEST_CASE("uniform logits keep the lexicographically smallest leaves") {
  // Four leaves under uniform scores; width 2 keeps the two smallest, each
  // scored -(ln 2 + ln 2).
  std::map<int64_t, std::vector<int>> seqs = {
      {0, {0, 0}}, {1, {0, 1}}, {2, {1, 0}}, {3, {1, 1}}};
  CodeTrie t = CodeTrie::build(seqs);
  StepFn uniform = [](std::span<const int>) {
    return std::vector<double>(2, 0.0);
  };
  auto out = constrained_beam_search(uniform, t, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0].codes == std::vector<int>{0, 0});
  CHECK(out[1].codes == std::vector<int>{0, 1});
  for (const auto& s : out)
    CHECK(s.score == doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("leaf probabilities sum to one") {
  // Per-level constrained softmax telescopes: over a full-width beam the
  // exponentiated joint scores form a distribution over the leaves.
  auto seqs = random_sequences(30, 3, 5, 17);
  CodeTrie t = CodeTrie::build(seqs);
  auto out = constrained_beam_search(random_step_fn(5, 23), t, 30);
  REQUIRE(out.size() == 30);
  double total = 0.0;
  for (const auto& s : out) total += std::exp(s.score);
  CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("empty trie and bad width") {
  CodeTrie empty = CodeTrie::build({});
  StepFn fn = random_step_fn(4, 3);
  CHECK(constrained_beam_search(fn, empty, 5).empty());
  std::map<int64_t, std::vector<int>> seqs = {{1, {0}}};
  CodeTrie t = CodeTrie::build(seqs);
  CHECK_THROWS_AS(constrained_beam_search(fn, t, 0), ConfigError);
}

TEST_CASE("beam scores are never positive") {
  auto seqs = random_sequences(50, 3, 6, 31);
  CodeTrie t = CodeTrie::build(seqs);
  auto out = constrained_beam_search(random_step_fn(6, 77), t, 10);
  CHECK(out.size() == 10);
  for (const auto& s : out) CHECK(s.score <= 1e-15);
}

}  // TEST_SUITE
