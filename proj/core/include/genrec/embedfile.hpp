#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace genrec {

// Shared embedding file: header (magic, version, item count, dimension),
// then per item a 64-bit id and d little-endian f32 components.
using EmbeddingTable = std::map<int64_t, std::vector<double>>;

void save_embeddings(const std::string& path, const EmbeddingTable& table,
                     int dim);
EmbeddingTable load_embeddings(const std::string& path, int* dim_out = nullptr);

}  // namespace genrec
