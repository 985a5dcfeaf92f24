#include "genrec/rq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binio.hpp"
#include "genrec/errors.hpp"
#include "genrec/rng.hpp"

namespace genrec {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest_center(const Codebook& cb, std::span<const double> x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.entries; ++k) {
    double d = sq_dist(x, cb.center(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

Codebook kmeans_init(const std::vector<std::vector<double>>& vectors, int k,
                     uint64_t seed, int lloyd_iterations) {
  if (vectors.empty()) throw EmptyInput("no vectors to cluster");
  const int n = static_cast<int>(vectors.size());
  const int d = static_cast<int>(vectors[0].size());
  Rng rng(seed);

  Codebook cb;
  cb.dim = d;
  cb.entries = k;
  cb.centers.assign(static_cast<size_t>(k) * d, 0.0);

  // k-means++ seeding.
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  int first = uniform_int(rng, n);
  std::copy(vectors[first].begin(), vectors[first].end(), cb.centers.begin());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    std::span<const double> prev = cb.center(c - 1);
    for (int i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], sq_dist(vectors[i], prev));
      total += min_d2[i];
    }
    int chosen = 0;
    if (total > 0.0) {
      double r = uniform_double(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += min_d2[i];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = uniform_int(rng, n);
    }
    std::copy(vectors[chosen].begin(), vectors[chosen].end(),
              cb.centers.begin() + static_cast<size_t>(c) * d);
  }

  std::vector<int> assign(n, 0);
  std::vector<double> sums(static_cast<size_t>(k) * d);
  std::vector<int> counts(k);
  for (int it = 0; it < lloyd_iterations; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      assign[i] = nearest_center(cb, vectors[i]);
      counts[assign[i]] += 1;
      double* s = sums.data() + static_cast<size_t>(assign[i]) * d;
      for (int j = 0; j < d; ++j) s[j] += vectors[i][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        double* ctr = cb.centers.data() + static_cast<size_t>(c) * d;
        const double* s = sums.data() + static_cast<size_t>(c) * d;
        for (int j = 0; j < d; ++j) ctr[j] = s[j] / counts[c];
      } else {
        // Re-seed an empty cluster from the point farthest from its center.
        int far_i = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double di = sq_dist(vectors[i], cb.center(assign[i]));
          if (di > far_d) {
            far_d = di;
            far_i = i;
          }
        }
        std::copy(vectors[far_i].begin(), vectors[far_i].end(),
                  cb.centers.begin() + static_cast<size_t>(c) * d);
      }
    }
  }

  cb.ema_count.assign(k, 1.0);
  cb.ema_sum = cb.centers;
  return cb;
}

RqCodec::RqCodec(int dim, std::vector<Codebook> levels, int collision_vocab)
    : dim_(dim), collision_vocab_(collision_vocab), levels_(std::move(levels)) {
  for (size_t l = 0; l < levels_.size(); ++l) {
    levels_[l].level = static_cast<int>(l);
    if (levels_[l].dim != dim_)
      throw DimensionMismatch("codebook dim does not match codec dim");
  }
}

RqCodec RqCodec::fit(const std::vector<std::vector<double>>& vectors,
                     int levels, int entries, int lloyd_iterations,
                     uint64_t seed, int collision_vocab) {
  if (vectors.empty()) throw EmptyInput("no vectors to fit");
  const int d = static_cast<int>(vectors[0].size());
  for (const auto& v : vectors)
    if (static_cast<int>(v.size()) != d)
      throw DimensionMismatch("inconsistent vector dims");

  std::vector<std::vector<double>> residuals = vectors;
  std::vector<Codebook> books;
  books.reserve(levels);
  for (int l = 0; l < levels; ++l) {
    Codebook cb =
        kmeans_init(residuals, entries, derive_seed(seed, "rq-level-" + std::to_string(l)),
                    lloyd_iterations);
    cb.level = l;
    for (auto& r : residuals) {
      int k = nearest_center(cb, r);
      std::span<const double> c = cb.center(k);
      for (int j = 0; j < d; ++j) r[j] -= c[j];
    }
    books.push_back(std::move(cb));
  }
  return RqCodec(d, std::move(books), collision_vocab);
}

EncodeResult RqCodec::encode(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim_)
    throw DimensionMismatch("encode input dim mismatch");
  EncodeResult out;
  out.residuals.emplace_back(x.begin(), x.end());
  // Residuals are computed against the running decode sum with the same
  // accumulation order decode() uses, so x - decode(codes) reproduces the
  // final residual bitwise.
  std::vector<double> partial(dim_, 0.0);
  for (const auto& cb : levels_) {
    const auto& r = out.residuals.back();
    int k = nearest_center(cb, r);
    out.codes.push_back(k);
    std::span<const double> c = cb.center(k);
    std::vector<double> next(dim_);
    for (int j = 0; j < dim_; ++j) {
      partial[j] += c[j];
      next[j] = x[j] - partial[j];
    }
    out.residuals.push_back(std::move(next));
  }
  return out;
}

std::vector<double> RqCodec::decode(std::span<const int> codes) const {
  if (codes.size() < levels_.size())
    throw DimensionMismatch("decode needs a code per level");
  std::vector<double> out(dim_, 0.0);
  for (size_t l = 0; l < levels_.size(); ++l) {
    const Codebook& cb = levels_[l];
    if (codes[l] < 0 || codes[l] >= cb.entries)
      throw CodeOutOfRange("code " + std::to_string(codes[l]) + " at level " +
                           std::to_string(l));
    std::span<const double> c = cb.center(codes[l]);
    for (int j = 0; j < dim_; ++j) out[j] += c[j];
  }
  return out;
}

void RqCodec::ema_update(const std::vector<EmaAssignment>& batch) {
  const double g = ema_decay_;
  for (auto& cb : levels_) {
    // Per-entry statistics for this batch.
    std::vector<double> n_k(cb.entries, 0.0);
    std::vector<double> r_sum(static_cast<size_t>(cb.entries) * cb.dim, 0.0);
    bool touched = false;
    for (const auto& a : batch) {
      if (a.level != cb.level) continue;
      if (a.code < 0 || a.code >= cb.entries)
        throw CodeOutOfRange("ema code out of range");
      if (static_cast<int>(a.residual.size()) != cb.dim)
        throw DimensionMismatch("ema residual dim mismatch");
      touched = true;
      n_k[a.code] += 1.0;
      double* s = r_sum.data() + static_cast<size_t>(a.code) * cb.dim;
      for (int j = 0; j < cb.dim; ++j) s[j] += a.residual[j];
    }
    if (!touched) continue;
    for (int k = 0; k < cb.entries; ++k) {
      cb.ema_count[k] = g * cb.ema_count[k] + (1.0 - g) * n_k[k];
      double* s = cb.ema_sum.data() + static_cast<size_t>(k) * cb.dim;
      const double* b = r_sum.data() + static_cast<size_t>(k) * cb.dim;
      double* ctr = cb.centers.data() + static_cast<size_t>(k) * cb.dim;
      double denom = std::max(cb.ema_count[k], 1e-12);
      for (int j = 0; j < cb.dim; ++j) {
        s[j] = g * s[j] + (1.0 - g) * b[j];
        ctr[j] = s[j] / denom;
      }
    }
  }
}

Tensor commitment_loss(const Tensor& residual, std::span<const double> entry) {
  if (static_cast<size_t>(residual.size()) != entry.size())
    throw DimensionMismatch("commitment entry dim mismatch");
  Tensor diff = add_buffer(residual, entry, -1.0);
  return sum(mul(diff, diff));
}

std::map<int64_t, std::vector<int>> assign_collision_levels(
    RqCodec& codec, const std::map<int64_t, std::vector<int>>& item_codes) {
  // std::map iteration is ascending by item id, which fixes ordinal order.
  std::map<std::vector<int>, int> next_ordinal;
  std::vector<CollisionRecord> table;
  std::map<int64_t, std::vector<int>> out;
  for (const auto& [item, codes] : item_codes) {
    int ord = next_ordinal[codes]++;
    if (ord >= codec.collision_vocab())
      throw CollisionOverflow("more than " +
                              std::to_string(codec.collision_vocab()) +
                              " items share one code prefix");
    table.push_back({codes, item, ord});
    std::vector<int> full = codes;
    full.push_back(ord);
    out.emplace(item, std::move(full));
  }
  codec.set_collision_table(std::move(table));
  return out;
}

namespace {

constexpr uint32_t kCodecMagic = 0x43514752;  // "RGQC"
constexpr uint32_t kCodecVersion = 1;

using namespace binio;

}  // namespace

void save_codec(const std::string& path, const RqCodec& codec) {
  FilePtr f = open_write(path);
  write_u32(f.get(), kCodecMagic);
  write_u32(f.get(), kCodecVersion);
  write_u32(f.get(), static_cast<uint32_t>(codec.num_levels()));
  write_u32(f.get(),
            codec.num_levels() > 0
                ? static_cast<uint32_t>(codec.level(0).entries)
                : 0u);
  write_u32(f.get(), static_cast<uint32_t>(codec.dim()));
  write_u32(f.get(), static_cast<uint32_t>(codec.collision_vocab()));
  for (int l = 0; l < codec.num_levels(); ++l) {
    const Codebook& cb = codec.level(l);
    for (double v : cb.centers) write_f32(f.get(), static_cast<float>(v));
  }
  const auto& table = codec.collision_table();
  write_u64(f.get(), table.size());
  for (const auto& rec : table) {
    for (int c : rec.prefix) write_u32(f.get(), static_cast<uint32_t>(c));
    write_u64(f.get(), static_cast<uint64_t>(rec.item));
    write_u32(f.get(), static_cast<uint32_t>(rec.ordinal));
  }
}

RqCodec load_codec(const std::string& path) {
  FilePtr f = open_read(path);
  if (read_u32(f.get()) != kCodecMagic) throw IoError("bad codec magic");
  if (read_u32(f.get()) != kCodecVersion) throw IoError("bad codec version");
  int levels = static_cast<int>(read_u32(f.get()));
  int entries = static_cast<int>(read_u32(f.get()));
  int dim = static_cast<int>(read_u32(f.get()));
  int collision_vocab = static_cast<int>(read_u32(f.get()));
  std::vector<Codebook> books(levels);
  for (int l = 0; l < levels; ++l) {
    Codebook& cb = books[l];
    cb.level = l;
    cb.dim = dim;
    cb.entries = entries;
    cb.centers.resize(static_cast<size_t>(entries) * dim);
    for (auto& v : cb.centers) v = read_f32(f.get());
    cb.ema_count.assign(entries, 1.0);
    cb.ema_sum = cb.centers;
  }
  RqCodec codec(dim, std::move(books), collision_vocab);
  uint64_t rows = read_u64(f.get());
  std::vector<CollisionRecord> table(rows);
  for (auto& rec : table) {
    rec.prefix.resize(levels);
    for (int l = 0; l < levels; ++l)
      rec.prefix[l] = static_cast<int>(read_u32(f.get()));
    rec.item = static_cast<int64_t>(read_u64(f.get()));
    rec.ordinal = static_cast<int>(read_u32(f.get()));
  }
  codec.set_collision_table(std::move(table));
  return codec;
}

}  // namespace genrec
