#include <benchmark/benchmark.h>

#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "genrec/rng.hpp"
#include "genrec/rq.hpp"
#include "genrec/tensor.hpp"
#include "genrec/trie.hpp"

using namespace genrec;

namespace {

std::vector<std::vector<double>> random_vectors(int n, int dim, uint64_t seed) {
  Rng rng = make_rng(seed, "bench-data");
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& row : out)
    for (double& v : row) v = normal(rng);
  return out;
}

void bm_matmul_64(benchmark::State& state) {
  Rng rng = make_rng(1, "bench-matmul");
  Tensor a = Tensor::randn({64, 64}, 1.0, rng);
  Tensor b = Tensor::randn({64, 64}, 1.0, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
}

void bm_masked_log_softmax_row(benchmark::State& state) {
  Rng rng = make_rng(2, "bench-softmax");
  Tensor logits = Tensor::randn({1, 256}, 1.0, rng);
  std::vector<int> allowed;
  for (int i = 0; i < 256; i += 16) allowed.push_back(i);
  NoGradGuard ng;
  for (auto _ : state) {
    Tensor out = masked_log_softmax(logits, allowed);
    benchmark::DoNotOptimize(out.data().data());
  }
}

void bm_rq_encode(benchmark::State& state) {
  std::vector<std::vector<double>> data = random_vectors(512, 32, 3);
  RqCodec codec = RqCodec::fit(data, 2, 32, 10, 7);
  size_t i = 0;
  for (auto _ : state) {
    EncodeResult enc = codec.encode(data[i]);
    benchmark::DoNotOptimize(enc.codes.data());
    i = (i + 1) % data.size();
  }
}

void bm_constrained_beam(benchmark::State& state) {
  Rng rng = make_rng(4, "bench-trie");
  std::set<std::vector<int>> uniq;
  while (uniq.size() < 256) {
    std::vector<int> codes(3);
    for (int& c : codes) c = static_cast<int>(uniform_int(rng, 8));
    uniq.insert(codes);
  }
  std::map<int64_t, std::vector<int>> seqs;
  int64_t id = 0;
  for (const auto& codes : uniq) seqs.emplace(id++, codes);
  CodeTrie trie = CodeTrie::build(seqs);

  StepFn step = [](std::span<const int> prefix) {
    uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int c : prefix) h = h * 6364136223846793005ULL + static_cast<uint64_t>(c);
    Rng local(h);
    std::vector<double> scores(8);
    for (double& s : scores) s = normal(local);
    return scores;
  };
  for (auto _ : state) {
    std::vector<ScoredItem> out = constrained_beam_search(step, trie, 20);
    benchmark::DoNotOptimize(out.data());
  }
}

BENCHMARK(bm_matmul_64);
BENCHMARK(bm_masked_log_softmax_row);
BENCHMARK(bm_rq_encode);
BENCHMARK(bm_constrained_beam);

}  // namespace

BENCHMARK_MAIN();
