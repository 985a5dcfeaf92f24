#include "genrec/semantic_id.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "genrec/errors.hpp"

namespace genrec {

int ModalityLayout::token_id(int d, int l, int code) const {
  if (d < 0 || d >= num_modalities()) throw IndexOutOfRange("modality index");
  const ModalitySpec& spec = modalities[d];
  if (l < 0 || l >= spec.levels()) throw IndexOutOfRange("level index");
  if (code < 0 || code >= spec.level_sizes[l])
    throw CodeOutOfRange("code " + std::to_string(code) + " for " + spec.name +
                         " level " + std::to_string(l));
  return offsets[d][l] + code;
}

int ModalityLayout::decoder_vocab(int d) const {
  int total = 0;
  for (int s : modalities[d].level_sizes) total += s;
  return total + 3;
}

int ModalityLayout::decoder_offset(int d, int l) const {
  int off = 0;
  for (int i = 0; i < l; ++i) off += modalities[d].level_sizes[i];
  return off;
}

std::pair<int, int> ModalityLayout::decoder_token_to_code(int d,
                                                          int token) const {
  int off = 0;
  for (int l = 0; l < modalities[d].levels(); ++l) {
    int size = modalities[d].level_sizes[l];
    if (token < off + size) return {l, token - off};
    off += size;
  }
  throw IndexOutOfRange("decoder token " + std::to_string(token) +
                        " outside code ranges");
}

ModalityLayout build_layout(std::vector<ModalitySpec> specs,
                            int target_modality) {
  if (specs.empty()) throw EmptyInput("layout needs at least one modality");
  for (const auto& s : specs) {
    if (s.level_sizes.empty())
      throw ConfigError("modality " + s.name + " has no levels");
    for (int k : s.level_sizes)
      if (k <= 0) throw ConfigError("non-positive vocabulary size");
  }
  if (target_modality < 0 ||
      target_modality >= static_cast<int>(specs.size()))
    throw IndexOutOfRange("target modality");

  ModalityLayout layout;
  layout.modalities = std::move(specs);
  layout.target_modality = target_modality;
  int next = 0;
  for (const auto& s : layout.modalities) {
    std::vector<int> offs;
    for (int k : s.level_sizes) {
      offs.push_back(next);
      next += k;
    }
    layout.offsets.push_back(std::move(offs));
  }
  for (const auto& s : layout.modalities) {
    std::vector<int> masks;
    for (int l = 0; l < s.levels(); ++l) masks.push_back(next++);
    layout.mask_ids.push_back(std::move(masks));
  }
  layout.pad_id = next++;
  layout.bos_id = next++;
  layout.eos_id = next++;
  layout.vocab = next;
  return layout;
}

HistoryTokens assemble_history(std::span<const ItemCodes> items,
                               const ModalityLayout& layout, int max_items) {
  if (static_cast<int>(items.size()) > max_items)
    throw HistoryTooLong(std::to_string(items.size()) + " items, limit " +
                         std::to_string(max_items));
  HistoryTokens out;
  const int D = layout.num_modalities();
  for (size_t i = 0; i < items.size(); ++i) {
    const ItemCodes& it = items[i];
    if (!it.present.empty() && !it.present[layout.target_modality])
      throw MissingTargetModality("item " + std::to_string(it.item));
    int within = 0;
    for (int d = 0; d < D; ++d) {
      const int levels = layout.modalities[d].levels();
      bool use_mask = true;
      if (d < static_cast<int>(it.present.size()) && it.present[d]) {
        bool masked =
            d < static_cast<int>(it.masked.size()) && it.masked[d];
        use_mask = masked;
      }
      if (!use_mask && (d >= static_cast<int>(it.codes.size()) ||
                        static_cast<int>(it.codes[d].size()) != levels))
        throw DimensionMismatch("code array length for item " +
                                std::to_string(it.item));
      for (int l = 0; l < levels; ++l) {
        int tok = use_mask ? layout.mask_ids[d][l]
                           : layout.token_id(d, l, it.codes[d][l]);
        out.tokens.push_back(tok);
        out.item_index.push_back(static_cast<int>(i));
        out.level_index.push_back(within++);
      }
    }
  }
  return out;
}

std::vector<ItemCodes> mask_modalities(std::span<const ItemCodes> items,
                                       double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("mask probability outside [0,1]");
  std::vector<ItemCodes> out(items.begin(), items.end());
  for (ItemCodes& it : out) {
    const int D = static_cast<int>(it.present.size());
    if (it.masked.size() != it.present.size())
      it.masked.assign(it.present.size(), false);
    for (int d = 0; d < D; ++d)
      if (!it.present[d]) it.masked[d] = true;
    if (D > 0 && uniform_double(rng) < p) {
      int d = uniform_int(rng, D);
      it.masked[d] = true;
    }
  }
  return out;
}

std::vector<int> target_tokens(const ItemCodes& item, int d,
                               const ModalityLayout& layout) {
  if (d < 0 || d >= static_cast<int>(item.present.size()) || !item.present[d])
    throw MissingTargetModality("item " + std::to_string(item.item));
  const int levels = layout.modalities[d].levels();
  if (static_cast<int>(item.codes[d].size()) != levels)
    throw DimensionMismatch("code array length");
  std::vector<int> out(levels);
  for (int l = 0; l < levels; ++l) {
    int code = item.codes[d][l];
    if (code < 0 || code >= layout.modalities[d].level_sizes[l])
      throw CodeOutOfRange("target code out of range");
    out[l] = layout.decoder_offset(d, l) + code;
  }
  return out;
}

void save_id_table(const std::string& path,
                   const std::map<int64_t, ItemCodes>& items,
                   const ModalityLayout& layout) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (const auto& [id, it] : items) {
    f << id;
    for (int d = 0; d < layout.num_modalities(); ++d) {
      bool present =
          d < static_cast<int>(it.present.size()) && it.present[d];
      f << '\t' << (present ? 1 : 0);
      const int levels = layout.modalities[d].levels();
      for (int l = 0; l < levels; ++l)
        f << '\t' << (present ? it.codes[d][l] : 0);
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed for " + path);
}

std::map<int64_t, ItemCodes> load_id_table(const std::string& path,
                                           const ModalityLayout& layout) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::map<int64_t, ItemCodes> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ItemCodes it;
    if (!(ss >> it.item))
      throw IoError(path + ":" + std::to_string(lineno) + ": bad item id");
    for (int d = 0; d < layout.num_modalities(); ++d) {
      int flag = 0;
      if (!(ss >> flag))
        throw IoError(path + ":" + std::to_string(lineno) + ": short record");
      it.present.push_back(flag != 0);
      const int levels = layout.modalities[d].levels();
      std::vector<int> codes(levels);
      for (int l = 0; l < levels; ++l)
        if (!(ss >> codes[l]))
          throw IoError(path + ":" + std::to_string(lineno) +
                        ": short record");
      it.codes.push_back(flag != 0 ? std::move(codes) : std::vector<int>{});
    }
    it.masked.assign(it.present.size(), false);
    out.emplace(it.item, std::move(it));
  }
  return out;
}

}  // namespace genrec
