#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "genrec/tensor.hpp"

namespace genrec {

// One quantization level: K entry vectors of dimension d plus the moving
// averages used for online center updates. Entries are stored flat (K*d).
struct Codebook {
  int level = 0;
  int dim = 0;
  int entries = 0;
  std::vector<double> centers;    // entries * dim
  std::vector<double> ema_count;  // entries
  std::vector<double> ema_sum;    // entries * dim

  std::span<const double> center(int k) const {
    return {centers.data() + static_cast<size_t>(k) * dim,
            static_cast<size_t>(dim)};
  }
};

struct EncodeResult {
  std::vector<int> codes;                       // length L
  std::vector<std::vector<double>> residuals;   // length L+1; residuals[0] = x
};

struct EmaAssignment {
  int level = 0;
  int code = 0;
  std::vector<double> residual;  // pre-quantization residual at that level
};

struct CollisionRecord {
  std::vector<int> prefix;  // the L-level code prefix
  int64_t item = 0;
  int ordinal = 0;
};

// Residual quantizer: a stack of codebooks over the raw embedding space
// (identity encoder/decoder), plus the per-item collision table appended as
// level L+1.
class RqCodec {
 public:
  RqCodec() = default;
  RqCodec(int dim, std::vector<Codebook> levels, int collision_vocab = 256);

  // Greedy level-by-level fit: level l is k-means over the residuals left by
  // levels < l. Deterministic under seed.
  static RqCodec fit(const std::vector<std::vector<double>>& vectors, int levels,
                     int entries, int lloyd_iterations, uint64_t seed,
                     int collision_vocab = 256);

  EncodeResult encode(std::span<const double> x) const;
  std::vector<double> decode(std::span<const int> codes) const;

  void ema_update(const std::vector<EmaAssignment>& batch);

  int dim() const { return dim_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  int collision_vocab() const { return collision_vocab_; }
  const Codebook& level(int l) const { return levels_[l]; }
  Codebook& level_mut(int l) { return levels_[l]; }
  double ema_decay() const { return ema_decay_; }
  void set_ema_decay(double g) { ema_decay_ = g; }

  const std::vector<CollisionRecord>& collision_table() const {
    return collisions_;
  }
  void set_collision_table(std::vector<CollisionRecord> t) {
    collisions_ = std::move(t);
  }

 private:
  int dim_ = 0;
  int collision_vocab_ = 256;
  double ema_decay_ = 0.99;
  std::vector<Codebook> levels_;
  std::vector<CollisionRecord> collisions_;
};

// k-means++ seeding followed by a bounded number of Lloyd iterations; empty
// clusters are re-seeded from the point farthest from its center.
Codebook kmeans_init(const std::vector<std::vector<double>>& vectors, int k,
                     uint64_t seed, int lloyd_iterations = 25);

// Squared Euclidean distance to the selected entry, entry treated as constant
// so gradient reaches the residual only.
Tensor commitment_loss(const Tensor& residual, std::span<const double> entry);

// Items sharing an L-prefix get ordinals 0,1,... in ascending item id,
// appended as code level L+1; the resulting sequences are unique. Also fills
// the codec's collision table for checkpointing.
std::map<int64_t, std::vector<int>> assign_collision_levels(
    RqCodec& codec, const std::map<int64_t, std::vector<int>>& item_codes);

// Binary checkpoint: header (magic, version, L, K, d, collision vocab), level
// entries as little-endian f32, then the collision table.
void save_codec(const std::string& path, const RqCodec& codec);
RqCodec load_codec(const std::string& path);

}  // namespace genrec
