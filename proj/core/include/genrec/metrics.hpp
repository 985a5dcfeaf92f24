#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace genrec {

struct RankingResult {
  int64_t gold = 0;
  std::vector<std::pair<int64_t, double>> ranked;  // scores non-increasing
};

// 1-based rank of the gold item, or 0 when absent from the candidate list.
int gold_rank(const RankingResult& r);

// Single-relevant-item definitions, averaged over results:
//   Recall@K = [rank <= K], NDCG@K = 1/log2(rank+1), MRR@K = 1/rank.
double recall_at_k(std::span<const RankingResult> results, int k);
double ndcg_at_k(std::span<const RankingResult> results, int k);
double mrr_at_k(std::span<const RankingResult> results, int k);

}  // namespace genrec
