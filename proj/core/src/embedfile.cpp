#include "genrec/embedfile.hpp"

#include "binio.hpp"
#include "genrec/errors.hpp"

namespace genrec {

namespace {
constexpr uint32_t kEmbedMagic = 0x44424d45;  // "EMBD"
constexpr uint32_t kEmbedVersion = 1;
using namespace binio;
}  // namespace

void save_embeddings(const std::string& path, const EmbeddingTable& table,
                     int dim) {
  FilePtr f = open_write(path);
  write_u32(f.get(), kEmbedMagic);
  write_u32(f.get(), kEmbedVersion);
  write_u64(f.get(), table.size());
  write_u32(f.get(), static_cast<uint32_t>(dim));
  for (const auto& [id, vec] : table) {
    if (static_cast<int>(vec.size()) != dim)
      throw DimensionMismatch("embedding for item " + std::to_string(id) +
                              " has dim " + std::to_string(vec.size()));
    write_u64(f.get(), static_cast<uint64_t>(id));
    for (double v : vec) write_f32(f.get(), static_cast<float>(v));
  }
}

EmbeddingTable load_embeddings(const std::string& path, int* dim_out) {
  FilePtr f = open_read(path);
  if (read_u32(f.get()) != kEmbedMagic)
    throw IoError(path + ": bad embedding magic");
  if (read_u32(f.get()) != kEmbedVersion)
    throw IoError(path + ": bad embedding version");
  uint64_t count = read_u64(f.get());
  int dim = static_cast<int>(read_u32(f.get()));
  EmbeddingTable out;
  for (uint64_t i = 0; i < count; ++i) {
    int64_t id = static_cast<int64_t>(read_u64(f.get()));
    std::vector<double> vec(dim);
    for (auto& v : vec) v = read_f32(f.get());
    out.emplace(id, std::move(vec));
  }
  if (dim_out) *dim_out = dim;
  return out;
}

}  // namespace genrec
