#include "genrec/metrics.hpp"

#include <cmath>

#include "genrec/errors.hpp"

namespace genrec {

int gold_rank(const RankingResult& r) {
  for (size_t i = 0; i < r.ranked.size(); ++i)
    if (r.ranked[i].first == r.gold) return static_cast<int>(i) + 1;
  return 0;
}

namespace {

template <typename Gain>
double averaged(std::span<const RankingResult> results, int k, Gain gain) {
  if (k < 1) throw ConfigError("metric cutoff must be >= 1");
  if (results.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : results) {
    int rank = gold_rank(r);
    if (rank >= 1 && rank <= k) total += gain(rank);
  }
  return total / static_cast<double>(results.size());
}

}  // namespace

double recall_at_k(std::span<const RankingResult> results, int k) {
  return averaged(results, k, [](int) { return 1.0; });
}

double ndcg_at_k(std::span<const RankingResult> results, int k) {
  return averaged(results, k,
                  [](int rank) { return 1.0 / std::log2(rank + 1.0); });
}

double mrr_at_k(std::span<const RankingResult> results, int k) {
  return averaged(results, k, [](int rank) { return 1.0 / rank; });
}

}  // namespace genrec
