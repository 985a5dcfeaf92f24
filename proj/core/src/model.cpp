#include "genrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "binio.hpp"
#include "genrec/errors.hpp"
#include "genrec/optim.hpp"

namespace genrec {

namespace {

constexpr int kMaxDistAcross = 128;
constexpr int kMaxDistWithin = 32;
constexpr double kInitStd = 0.02;

}  // namespace

int relative_bucket(int offset, int num_buckets, int max_distance) {
  if (num_buckets < 4) throw ConfigError("bucket budget must be >= 4");
  int half = num_buckets / 2;
  int bucket = offset > 0 ? half : 0;
  int n = std::abs(offset);
  int max_exact = half / 2;
  if (n < max_exact) return bucket + n;
  double v = max_exact +
             std::log(static_cast<double>(n) / max_exact) /
                 std::log(static_cast<double>(max_distance) / max_exact) *
                 (half - max_exact);
  return bucket + std::min(static_cast<int>(v), half - 1);
}

Seq2Seq::Seq2Seq(ModelConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.input_vocab <= 0 || cfg_.output_vocab <= 0)
    throw ConfigError("model vocabularies must be positive");
  if (cfg_.codes_per_item <= 0 || cfg_.target_len <= 0)
    throw ConfigError("token geometry must be positive");
  if (cfg_.bins_across < 4 || cfg_.bins_within < 4)
    throw ConfigError("bin split too small");
  const int w = cfg_.width();
  Rng rng = make_rng(cfg_.seed, "model-init");

  auto weight = [&](const std::string& name, int r, int c) {
    params_.emplace_back(name, Tensor::randn({r, c}, kInitStd, rng, true));
  };
  auto ones = [&](const std::string& name, int n) {
    params_.emplace_back(
        name, Tensor::parameter({1, n}, std::vector<double>(n, 1.0)));
  };
  auto zeros = [&](const std::string& name, int n) {
    params_.emplace_back(
        name, Tensor::parameter({1, n}, std::vector<double>(n, 0.0)));
  };
  auto attn = [&](const std::string& prefix) {
    weight(prefix + ".wq", w, w);
    weight(prefix + ".wk", w, w);
    weight(prefix + ".wv", w, w);
    weight(prefix + ".wo", w, w);
  };
  auto ffn = [&](const std::string& prefix) {
    weight(prefix + ".w1", w, cfg_.ffn);
    zeros(prefix + ".b1", cfg_.ffn);
    weight(prefix + ".w2", cfg_.ffn, w);
    zeros(prefix + ".b2", w);
  };
  auto ln = [&](const std::string& prefix) {
    ones(prefix + ".g", w);
    zeros(prefix + ".b", w);
  };

  weight("enc.embed", cfg_.input_vocab, w);
  weight("dec.embed", cfg_.output_vocab, w);
  weight("bias.across", cfg_.bins_across, cfg_.heads);
  weight("bias.within", cfg_.bins_within, cfg_.heads);
  for (int i = 0; i < cfg_.enc_layers; ++i) {
    std::string p = "enc." + std::to_string(i);
    ln(p + ".ln1");
    attn(p + ".attn");
    ln(p + ".ln2");
    ffn(p + ".ff");
  }
  ln("enc.final_ln");
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    std::string p = "dec." + std::to_string(i);
    ln(p + ".ln1");
    attn(p + ".self");
    ln(p + ".ln2");
    attn(p + ".cross");
    ln(p + ".ln3");
    ffn(p + ".ff");
  }
  ln("dec.final_ln");
  weight("out.proj", w, cfg_.output_vocab);
}

Tensor Seq2Seq::get(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw ConfigError("unknown parameter " + name);
}

std::vector<Tensor> Seq2Seq::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

namespace {

struct BiasSpec {
  Tensor across;
  Tensor within;
  std::vector<int> bucket_across;  // n*n
  std::vector<int> bucket_within;  // n*n
};

// Pre-LN multi-head attention block body (no residual).
Tensor multihead(const Seq2Seq& model, const std::string& prefix,
                 const Tensor& xq, const Tensor& xkv, const BiasSpec* bias,
                 std::span<const double> extra_mask, bool train_mode,
                 double drop_p, Rng* rng);

Tensor get_param(const Seq2Seq& model, const std::string& name) {
  for (const auto& [n, t] : model.named_parameters())
    if (n == name) return t;
  throw ConfigError("unknown parameter " + name);
}

Tensor multihead(const Seq2Seq& model, const std::string& prefix,
                 const Tensor& xq, const Tensor& xkv, const BiasSpec* bias,
                 std::span<const double> extra_mask, bool train_mode,
                 double drop_p, Rng* rng) {
  const ModelConfig& cfg = model.config();
  const int h = cfg.heads, dh = cfg.head_dim;
  const int n = xq.rows(), m = xkv.rows();
  Tensor q = matmul(xq, get_param(model, prefix + ".wq"));
  Tensor k = matmul(xkv, get_param(model, prefix + ".wk"));
  Tensor v = matmul(xkv, get_param(model, prefix + ".wv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(h);
  for (int i = 0; i < h; ++i) {
    Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
    Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
    Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (bias) {
      if (n != m) throw ShapeMismatch("relative bias needs square attention");
      scores = add(scores, attention_bias(bias->across, bias->within,
                                          bias->bucket_across,
                                          bias->bucket_within, n, i));
    }
    if (!extra_mask.empty()) scores = add_buffer(scores, extra_mask);
    Tensor probs = softmax_rows(scores);
    if (train_mode && rng) probs = dropout(probs, drop_p, *rng, true);
    heads.push_back(matmul(probs, vh));
  }
  Tensor merged = concat_cols(heads);
  return matmul(merged, get_param(model, prefix + ".wo"));
}

Tensor feed_forward(const Seq2Seq& model, const std::string& prefix,
                    const Tensor& x, bool train_mode, double drop_p,
                    Rng* rng) {
  Tensor hmid = add_rowvec(matmul(x, get_param(model, prefix + ".w1")),
                           get_param(model, prefix + ".b1"));
  hmid = gelu(hmid);
  if (train_mode && rng) hmid = dropout(hmid, drop_p, *rng, true);
  return add_rowvec(matmul(hmid, get_param(model, prefix + ".w2")),
                    get_param(model, prefix + ".b2"));
}

Tensor apply_ln(const Seq2Seq& model, const std::string& prefix,
                const Tensor& x) {
  return layer_norm(x, get_param(model, prefix + ".g"),
                    get_param(model, prefix + ".b"));
}

}  // namespace

Memory Seq2Seq::encode(const HistoryTokens& hist, bool train_mode,
                       Rng* rng) const {
  const int n = static_cast<int>(hist.tokens.size());
  if (n > cfg_.max_history_items * cfg_.codes_per_item)
    throw SequenceTooLong(std::to_string(n) + " tokens, limit " +
                          std::to_string(cfg_.max_history_items *
                                         cfg_.codes_per_item));
  Memory mem;
  mem.item_index = hist.item_index;
  mem.level_index = hist.level_index;
  if (n == 0) return mem;

  BiasSpec bias{get("bias.across"), get("bias.within"),
                std::vector<int>(static_cast<size_t>(n) * n),
                std::vector<int>(static_cast<size_t>(n) * n)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      bias.bucket_across[static_cast<size_t>(i) * n + j] = relative_bucket(
          hist.item_index[j] - hist.item_index[i], cfg_.bins_across,
          kMaxDistAcross);
      bias.bucket_within[static_cast<size_t>(i) * n + j] = relative_bucket(
          hist.level_index[j] - hist.level_index[i], cfg_.bins_within,
          kMaxDistWithin);
    }
  }

  // Padding keys are excluded from every attention row.
  std::vector<double> pad_mask;
  if (cfg_.pad_token >= 0) {
    bool any = false;
    for (int t : hist.tokens) any = any || (t == cfg_.pad_token);
    if (any) {
      pad_mask.assign(static_cast<size_t>(n) * n, 0.0);
      for (int j = 0; j < n; ++j) {
        if (hist.tokens[j] != cfg_.pad_token) continue;
        for (int i = 0; i < n; ++i)
          pad_mask[static_cast<size_t>(i) * n + j] = kNegInf;
      }
    }
  }

  Tensor x = embedding_lookup(get("enc.embed"), hist.tokens);
  if (train_mode && rng) x = dropout(x, cfg_.dropout, *rng, true);
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    std::string p = "enc." + std::to_string(l);
    Tensor a = multihead(*this, p + ".attn", apply_ln(*this, p + ".ln1", x),
                         apply_ln(*this, p + ".ln1", x), &bias, pad_mask,
                         train_mode, cfg_.dropout, rng);
    if (train_mode && rng) a = dropout(a, cfg_.dropout, *rng, true);
    x = add(x, a);
    Tensor f = feed_forward(*this, p + ".ff", apply_ln(*this, p + ".ln2", x),
                            train_mode, cfg_.dropout, rng);
    if (train_mode && rng) f = dropout(f, cfg_.dropout, *rng, true);
    x = add(x, f);
  }
  mem.states = apply_ln(*this, "enc.final_ln", x);
  return mem;
}

Tensor Seq2Seq::decode(const Memory& mem, std::span<const int> prefix_tokens,
                       bool train_mode, Rng* rng) const {
  const int n = static_cast<int>(prefix_tokens.size());
  if (n < 1) throw EmptyInput("decoder prefix needs the begin token");
  if (n > cfg_.target_len)
    throw PrefixTooLong(std::to_string(n) + " tokens, limit " +
                        std::to_string(cfg_.target_len));

  // Decoder tokens are levels of one future item: across-offset 0, signed
  // within-offsets between levels.
  BiasSpec bias{get("bias.across"), get("bias.within"),
                std::vector<int>(static_cast<size_t>(n) * n),
                std::vector<int>(static_cast<size_t>(n) * n)};
  std::vector<double> causal(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      bias.bucket_across[static_cast<size_t>(i) * n + j] =
          relative_bucket(0, cfg_.bins_across, kMaxDistAcross);
      bias.bucket_within[static_cast<size_t>(i) * n + j] =
          relative_bucket(j - i, cfg_.bins_within, kMaxDistWithin);
      if (j > i) causal[static_cast<size_t>(i) * n + j] = kNegInf;
    }
  }

  const bool has_memory = mem.states.defined() && mem.states.rows() > 0;
  Tensor x = embedding_lookup(get("dec.embed"), prefix_tokens);
  if (train_mode && rng) x = dropout(x, cfg_.dropout, *rng, true);
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    std::string p = "dec." + std::to_string(l);
    Tensor a = multihead(*this, p + ".self", apply_ln(*this, p + ".ln1", x),
                         apply_ln(*this, p + ".ln1", x), &bias, causal,
                         train_mode, cfg_.dropout, rng);
    if (train_mode && rng) a = dropout(a, cfg_.dropout, *rng, true);
    x = add(x, a);
    if (has_memory) {
      Tensor c = multihead(*this, p + ".cross",
                           apply_ln(*this, p + ".ln2", x), mem.states,
                           nullptr, {}, train_mode, cfg_.dropout, rng);
      if (train_mode && rng) c = dropout(c, cfg_.dropout, *rng, true);
      x = add(x, c);
    }
    Tensor f = feed_forward(*this, p + ".ff", apply_ln(*this, p + ".ln3", x),
                            train_mode, cfg_.dropout, rng);
    if (train_mode && rng) f = dropout(f, cfg_.dropout, *rng, true);
    x = add(x, f);
  }
  x = apply_ln(*this, "dec.final_ln", x);
  return matmul(x, get("out.proj"));
}

std::vector<double> Seq2Seq::decode_step(
    const Memory& mem, std::span<const int> prefix_tokens) const {
  NoGradGuard ng;
  Tensor logits = decode(mem, prefix_tokens);
  const int v = logits.cols();
  const double* row =
      logits.data().data() + static_cast<size_t>(logits.rows() - 1) * v;
  return std::vector<double>(row, row + v);
}

Tensor Seq2Seq::training_loss(std::span<const TrainExample> batch,
                              const CodeTrie& trie,
                              const ModalityLayout& layout, double masking_p,
                              Rng& rng, bool constrained,
                              bool train_mode) const {
  if (batch.empty()) throw EmptyInput("empty training batch");
  const int d = layout.target_modality;
  Tensor total = Tensor::scalar(0.0);
  int terms = 0;
  for (const TrainExample& ex : batch) {
    std::vector<ItemCodes> hist =
        mask_modalities(ex.history, masking_p, rng);
    HistoryTokens tokens =
        assemble_history(hist, layout, cfg_.max_history_items);
    Memory mem = encode(tokens, train_mode, &rng);

    if (static_cast<int>(ex.target.codes.size()) <= d ||
        !ex.target.present[d])
      throw MissingTargetModality("item " + std::to_string(ex.target.item));
    const std::vector<int>& gold = ex.target.codes[d];
    std::vector<int> dec_tokens = {layout.decoder_bos(d)};
    for (int l = 0; l + 1 < static_cast<int>(gold.size()); ++l)
      dec_tokens.push_back(layout.decoder_offset(d, l) + gold[l]);
    Tensor logits = decode(mem, dec_tokens, train_mode, &rng);

    Tensor ex_loss = Tensor::scalar(0.0);
    for (int l = 0; l < static_cast<int>(gold.size()); ++l) {
      Tensor row = slice_rows(logits, l, l + 1);
      if (constrained) {
        int off = layout.decoder_offset(d, l);
        int k = layout.modalities[d].level_sizes[l];
        Tensor seg = slice_cols(row, off, off + k);
        std::span<const int> prefix(gold.data(), static_cast<size_t>(l));
        ex_loss = add(ex_loss, constrained_nll(seg, prefix, gold[l], trie));
      } else {
        Tensor lp = log_softmax(row);
        ex_loss = add(ex_loss,
                      negate(pick(lp, layout.decoder_offset(d, l) + gold[l])));
      }
    }
    total = add(total, ex_loss);
    ++terms;
  }
  return scale(total, 1.0 / terms);
}

StepFn beam_step_fn(const Seq2Seq& model, const Memory& mem,
                    const ModalityLayout& layout) {
  return [&model, &mem, &layout](std::span<const int> prefix) {
    const int d = layout.target_modality;
    std::vector<int> dec = {layout.decoder_bos(d)};
    for (size_t l = 0; l < prefix.size(); ++l)
      dec.push_back(layout.decoder_offset(d, static_cast<int>(l)) +
                    prefix[l]);
    std::vector<double> logits = model.decode_step(mem, dec);
    const int level = static_cast<int>(prefix.size());
    const int off = layout.decoder_offset(d, level);
    const int k = layout.modalities[d].level_sizes[level];
    return std::vector<double>(logits.begin() + off,
                               logits.begin() + off + k);
  };
}

TrainResult train(Seq2Seq& model, std::span<const TrainExample> train_set,
                  std::span<const TrainExample> val_set, const CodeTrie& trie,
                  const ModalityLayout& layout, const TrainParams& tp) {
  if (train_set.empty() || val_set.empty())
    throw EmptyInput("training needs non-empty train and validation splits");

  std::vector<Tensor> params = model.parameters();
  AdamWConfig oc;
  oc.lr = tp.lr;
  oc.weight_decay = tp.weight_decay;
  AdamW opt(params, oc);

  auto val_loss = [&]() {
    NoGradGuard ng;
    Rng quiet = make_rng(tp.seed, "validation");
    double total = 0.0;
    for (const TrainExample& ex : val_set) {
      total += model
                   .training_loss({&ex, 1}, trie, layout, 0.0, quiet,
                                  tp.constrained, false)
                   .item();
    }
    return total / static_cast<double>(val_set.size());
  };

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  int bad_epochs = 0;

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < tp.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(tp.seed, "shuffle-" + std::to_string(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[uniform_int(shuffle_rng, static_cast<int64_t>(i))]);
    Rng step_rng = make_rng(tp.seed, "epoch-" + std::to_string(epoch));

    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(tp.batch_size)) {
      size_t end =
          std::min(order.size(), start + static_cast<size_t>(tp.batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i)
        batch.push_back(train_set[order[i]]);
      for (Tensor& p : params) p.zero_grad();
      Tensor loss = model.training_loss(batch, trie, layout, tp.masking_p,
                                        step_rng, tp.constrained, true);
      backward(loss);
      opt.step();
      epoch_loss += loss.item();
      ++batches;
      clear_tape();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / std::max(batches, 1);
    rec.val_loss = val_loss();
    result.history.push_back(rec);

    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best_params.clear();
      for (const Tensor& p : params)
        best_params.emplace_back(p.data().begin(), p.data().end());
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs > tp.patience) break;
    }
  }

  if (!best_params.empty()) {
    for (size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].mutable_data();
      std::copy(best_params[i].begin(), best_params[i].end(), dst.begin());
    }
  }
  return result;
}

namespace {
constexpr uint32_t kModelMagic = 0x444d5247;  // "GRMD"
constexpr uint32_t kModelVersion = 1;
using namespace binio;
}  // namespace

void save_model(const std::string& path, const Seq2Seq& model) {
  FilePtr f = open_write(path);
  const ModelConfig& c = model.config();
  write_u32(f.get(), kModelMagic);
  write_u32(f.get(), kModelVersion);
  for (int v : {c.enc_layers, c.dec_layers, c.heads, c.head_dim, c.ffn,
                c.input_vocab, c.output_vocab, c.max_history_items,
                c.codes_per_item, c.target_len, c.bins_across, c.bins_within,
                c.pad_token})
    write_u32(f.get(), static_cast<uint32_t>(v));
  write_f32(f.get(), static_cast<float>(c.dropout));
  write_u64(f.get(), c.seed);
  const auto& named = model.named_parameters();
  write_u32(f.get(), static_cast<uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    write_str(f.get(), name);
    write_u32(f.get(), static_cast<uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(f.get(), static_cast<uint32_t>(d));
    for (double v : t.data()) write_f32(f.get(), static_cast<float>(v));
  }
}

Seq2Seq load_model(const std::string& path) {
  FilePtr f = open_read(path);
  if (read_u32(f.get()) != kModelMagic)
    throw IncompatibleCheckpoint(path + ": bad model magic");
  if (read_u32(f.get()) != kModelVersion)
    throw IncompatibleCheckpoint(path + ": bad model version");
  ModelConfig c;
  int* fields[] = {&c.enc_layers,  &c.dec_layers,       &c.heads,
                   &c.head_dim,    &c.ffn,              &c.input_vocab,
                   &c.output_vocab, &c.max_history_items, &c.codes_per_item,
                   &c.target_len,  &c.bins_across,      &c.bins_within,
                   &c.pad_token};
  for (int* p : fields) *p = static_cast<int>(read_u32(f.get()));
  c.dropout = read_f32(f.get());
  c.seed = read_u64(f.get());

  Seq2Seq model(c);
  uint32_t count = read_u32(f.get());
  if (count != model.params_.size())
    throw IncompatibleCheckpoint(path + ": parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = read_str(f.get());
    uint32_t rank = read_u32(f.get());
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(read_u32(f.get()));
      n *= d;
    }
    Tensor t = model.get(name);
    if (t.shape() != shape)
      throw IncompatibleCheckpoint(path + ": shape mismatch for " + name);
    auto dst = t.mutable_data();
    for (int64_t j = 0; j < n; ++j) dst[j] = read_f32(f.get());
  }
  return model;
}

}  // namespace genrec
