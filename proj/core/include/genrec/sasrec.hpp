#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/dataset.hpp"
#include "genrec/embedfile.hpp"
#include "genrec/rng.hpp"
#include "genrec/tensor.hpp"

namespace genrec {

struct SasrecConfig {
  int dim = 64;
  int layers = 2;
  int heads = 2;
  int ffn = 128;
  int max_len = 20;
  int epochs = 10;
  int batch_size = 64;
  int negatives = 100;
  int max_cases_per_epoch = 0;  // 0 = use every training case
  double lr = 1e-3;
  double dropout = 0.1;
  uint64_t seed = 0;
};

// Causal self-attention sequential recommender over item-id embeddings,
// trained with sampled softmax (one positive, uniform negatives).
struct SasrecModel {
  SasrecConfig cfg;
  std::vector<int64_t> items;           // index -> item id, ascending
  std::map<int64_t, int> item_index;    // item id -> index
  std::vector<std::pair<std::string, Tensor>> params;

  Tensor param(const std::string& name) const;
};

SasrecModel train_sasrec(const SplitDataset& data, const SasrecConfig& cfg);

// Inner-product scores of the predicted state against every item embedding;
// full ranking, descending score, ties by ascending item id.
std::vector<std::pair<int64_t, double>> rank_items(
    const SasrecModel& model, std::span<const int64_t> history);

// The learned input item-embedding table, keyed by item id.
EmbeddingTable item_embedding_table(const SasrecModel& model);

}  // namespace genrec
