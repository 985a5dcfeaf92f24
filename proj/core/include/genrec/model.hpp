#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/rng.hpp"
#include "genrec/semantic_id.hpp"
#include "genrec/tensor.hpp"
#include "genrec/trie.hpp"

namespace genrec {

struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int head_dim = 16;
  int ffn = 128;
  int input_vocab = 0;
  int output_vocab = 0;
  int max_history_items = 20;
  int codes_per_item = 0;  // sum over modalities of L_d+1
  int target_len = 0;      // decoder output positions (L+1 of the target)
  int bins_across = 24;    // bins_across + bins_within = total bin budget
  int bins_within = 8;
  int pad_token = -1;  // encoder token excluded from attention, -1 disables
  double dropout = 0.1;
  uint64_t seed = 0;

  int width() const { return heads * head_dim; }
};

// Signed T5-style bucket: exact for small |offset|, log-spaced up to
// max_distance, separate halves per sign.
int relative_bucket(int offset, int num_buckets, int max_distance);

struct Memory {
  Tensor states;  // (tokens, width); undefined when the history is empty
  std::vector<int> item_index;
  std::vector<int> level_index;
};

struct TrainExample {
  std::vector<ItemCodes> history;
  ItemCodes target;
};

class Seq2Seq {
 public:
  explicit Seq2Seq(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
    return params_;
  }

  Memory encode(const HistoryTokens& hist, bool train_mode = false,
                Rng* rng = nullptr) const;
  // Causal decode over the whole prefix (begin-of-sequence token first);
  // returns logits for every position, (prefix length, output vocab).
  Tensor decode(const Memory& mem, std::span<const int> prefix_tokens,
                bool train_mode = false, Rng* rng = nullptr) const;
  // Inference helper: logits for the next position only, tape-free.
  std::vector<double> decode_step(const Memory& mem,
                                  std::span<const int> prefix_tokens) const;

  // Masking, encode, teacher-forced decode, constrained loss per level,
  // averaged over the batch. `constrained = false` swaps in the
  // full-vocabulary softmax (ablation arm).
  Tensor training_loss(std::span<const TrainExample> batch,
                       const CodeTrie& trie, const ModalityLayout& layout,
                       double masking_p, Rng& rng, bool constrained = true,
                       bool train_mode = true) const;

 private:
  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;

  Tensor get(const std::string& name) const;
  friend Seq2Seq load_model(const std::string& path);
};

// step_fn for constrained_beam_search: raw code prefix -> scores over the
// next level's code space. Caller keeps model/memory/layout alive.
StepFn beam_step_fn(const Seq2Seq& model, const Memory& mem,
                    const ModalityLayout& layout);

struct TrainParams {
  int epochs = 25;
  int patience = 3;
  int batch_size = 32;
  double lr = 2e-3;
  double weight_decay = 0.0;
  double masking_p = 0.75;
  bool constrained = true;
  uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

// Epoch loop with early stopping on validation loss; the model is left at the
// best-validation parameters.
TrainResult train(Seq2Seq& model, std::span<const TrainExample> train_set,
                  std::span<const TrainExample> val_set, const CodeTrie& trie,
                  const ModalityLayout& layout, const TrainParams& tp);

// Versioned checkpoint: config, then named f32 parameter payloads.
void save_model(const std::string& path, const Seq2Seq& model);
Seq2Seq load_model(const std::string& path);

}  // namespace genrec
