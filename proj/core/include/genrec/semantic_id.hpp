#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/rng.hpp"

namespace genrec {

struct ModalitySpec {
  std::string name;
  std::vector<int> level_sizes;  // per-level vocabulary sizes, length L+1

  int levels() const { return static_cast<int>(level_sizes.size()); }
};

// Global token-id layout: code ranges first (modality-major, level-major),
// then one mask token per (modality, level), then pad/bos/eos.
struct ModalityLayout {
  std::vector<ModalitySpec> modalities;
  std::vector<std::vector<int>> offsets;   // [d][l] -> first token id
  std::vector<std::vector<int>> mask_ids;  // [d][l]
  int pad_id = 0;
  int bos_id = 0;
  int eos_id = 0;
  int vocab = 0;
  int target_modality = 0;

  int num_modalities() const { return static_cast<int>(modalities.size()); }
  int token_id(int d, int l, int code) const;

  // Decoder-side vocabulary: the target modality's levels plus specials.
  int decoder_vocab(int d) const;
  int decoder_offset(int d, int l) const;
  int decoder_pad(int d) const { return decoder_vocab(d) - 3; }
  int decoder_bos(int d) const { return decoder_vocab(d) - 2; }
  int decoder_eos(int d) const { return decoder_vocab(d) - 1; }
  std::pair<int, int> decoder_token_to_code(int d, int token) const;
};

ModalityLayout build_layout(std::vector<ModalitySpec> specs,
                            int target_modality = 0);

struct ItemCodes {
  int64_t item = 0;
  std::vector<std::vector<int>> codes;  // per modality, length L+1 when present
  std::vector<bool> present;            // per modality
  std::vector<bool> masked;             // per modality, set by mask_modalities
};

struct HistoryTokens {
  std::vector<int> tokens;
  std::vector<int> item_index;   // per token: position of its item in history
  std::vector<int> level_index;  // per token: position within the item block
};

// Flattens a history into encoder tokens, modality-major per item. Masked and
// absent modalities emit their (modality, level) mask tokens.
HistoryTokens assemble_history(std::span<const ItemCodes> items,
                               const ModalityLayout& layout,
                               int max_items = 20);

// Per item, with probability p pick one modality uniformly and mask all its
// levels. Absent modalities are always masked.
std::vector<ItemCodes> mask_modalities(std::span<const ItemCodes> items,
                                       double p, Rng& rng);

// Target-modality codes translated into the decoder vocabulary.
std::vector<int> target_tokens(const ItemCodes& item, int d,
                               const ModalityLayout& layout);

// Semantic-ID table: "item\t(flag\tc0..cL)*" per line, zeros for absent.
void save_id_table(const std::string& path,
                   const std::map<int64_t, ItemCodes>& items,
                   const ModalityLayout& layout);
std::map<int64_t, ItemCodes> load_id_table(const std::string& path,
                                           const ModalityLayout& layout);

}  // namespace genrec
