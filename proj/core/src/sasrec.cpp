#include "genrec/sasrec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "genrec/errors.hpp"
#include "genrec/optim.hpp"

namespace genrec {

Tensor SasrecModel::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ConfigError("unknown parameter " + name);
}

namespace {

SasrecModel init_model(const SplitDataset& data, const SasrecConfig& cfg) {
  if (cfg.dim % cfg.heads != 0)
    throw ConfigError("embedding dim must divide across heads");
  SasrecModel m;
  m.cfg = cfg;
  m.items = data.items;
  for (size_t i = 0; i < m.items.size(); ++i)
    m.item_index.emplace(m.items[i], static_cast<int>(i));

  Rng rng = make_rng(cfg.seed, "sasrec-init");
  const int n_items = static_cast<int>(m.items.size());
  auto weight = [&](const std::string& name, int r, int c) {
    m.params.emplace_back(name, Tensor::randn({r, c}, 0.02, rng, true));
  };
  auto ones = [&](const std::string& name) {
    m.params.emplace_back(name, Tensor::parameter(
                                    {1, cfg.dim},
                                    std::vector<double>(cfg.dim, 1.0)));
  };
  auto zeros = [&](const std::string& name, int n) {
    m.params.emplace_back(
        name, Tensor::parameter({1, n}, std::vector<double>(n, 0.0)));
  };
  weight("embed", n_items, cfg.dim);
  weight("pos", cfg.max_len, cfg.dim);
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "l" + std::to_string(l);
    ones(p + ".ln1.g");
    zeros(p + ".ln1.b", cfg.dim);
    weight(p + ".wq", cfg.dim, cfg.dim);
    weight(p + ".wk", cfg.dim, cfg.dim);
    weight(p + ".wv", cfg.dim, cfg.dim);
    weight(p + ".wo", cfg.dim, cfg.dim);
    ones(p + ".ln2.g");
    zeros(p + ".ln2.b", cfg.dim);
    weight(p + ".ff.w1", cfg.dim, cfg.ffn);
    zeros(p + ".ff.b1", cfg.ffn);
    weight(p + ".ff.w2", cfg.ffn, cfg.dim);
    zeros(p + ".ff.b2", cfg.dim);
  }
  ones("final_ln.g");
  zeros("final_ln.b", cfg.dim);
  return m;
}

// States for an index sequence, (n, dim); causal pre-LN stack.
Tensor forward(const SasrecModel& m, std::span<const int> idx, bool train_mode,
               Rng* rng) {
  const SasrecConfig& cfg = m.cfg;
  const int n = static_cast<int>(idx.size());
  if (n == 0) throw EmptyInput("sasrec forward on empty history");
  if (n > cfg.max_len)
    throw SequenceTooLong(std::to_string(n) + " items, limit " +
                          std::to_string(cfg.max_len));
  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  Tensor x = add(embedding_lookup(m.param("embed"), idx),
                 embedding_lookup(m.param("pos"), pos));
  if (train_mode && rng) x = dropout(x, cfg.dropout, *rng, true);

  std::vector<double> causal(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      causal[static_cast<size_t>(i) * n + j] = kNegInf;

  const int dh = cfg.dim / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "l" + std::to_string(l);
    Tensor h = layer_norm(x, m.param(p + ".ln1.g"), m.param(p + ".ln1.b"));
    Tensor q = matmul(h, m.param(p + ".wq"));
    Tensor k = matmul(h, m.param(p + ".wk"));
    Tensor v = matmul(h, m.param(p + ".wv"));
    std::vector<Tensor> heads;
    for (int i = 0; i < cfg.heads; ++i) {
      Tensor qh = slice_cols(q, i * dh, (i + 1) * dh);
      Tensor kh = slice_cols(k, i * dh, (i + 1) * dh);
      Tensor vh = slice_cols(v, i * dh, (i + 1) * dh);
      Tensor scores =
          add_buffer(scale(matmul(qh, transpose(kh)), inv_sqrt), causal);
      Tensor probs = softmax_rows(scores);
      if (train_mode && rng) probs = dropout(probs, cfg.dropout, *rng, true);
      heads.push_back(matmul(probs, vh));
    }
    Tensor a = matmul(concat_cols(heads), m.param(p + ".wo"));
    if (train_mode && rng) a = dropout(a, cfg.dropout, *rng, true);
    x = add(x, a);
    Tensor h2 = layer_norm(x, m.param(p + ".ln2.g"), m.param(p + ".ln2.b"));
    Tensor f = add_rowvec(
        matmul(gelu(add_rowvec(matmul(h2, m.param(p + ".ff.w1")),
                               m.param(p + ".ff.b1"))),
               m.param(p + ".ff.w2")),
        m.param(p + ".ff.b2"));
    if (train_mode && rng) f = dropout(f, cfg.dropout, *rng, true);
    x = add(x, f);
  }
  return layer_norm(x, m.param("final_ln.g"), m.param("final_ln.b"));
}

std::vector<int> to_indices(const SasrecModel& m,
                            std::span<const int64_t> history) {
  std::vector<int> idx;
  idx.reserve(history.size());
  for (int64_t id : history) {
    auto it = m.item_index.find(id);
    if (it == m.item_index.end())
      throw IndexOutOfRange("unknown item " + std::to_string(id));
    idx.push_back(it->second);
  }
  return idx;
}

}  // namespace

SasrecModel train_sasrec(const SplitDataset& data, const SasrecConfig& cfg) {
  if (data.train.empty()) throw EmptyInput("no training cases");
  SasrecModel m = init_model(data, cfg);
  std::vector<Tensor> params;
  for (auto& [_, t] : m.params) params.push_back(t);
  AdamWConfig oc;
  oc.lr = cfg.lr;
  AdamW opt(params, oc);

  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const int n_items = static_cast<int>(m.items.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, "sasrec-epoch-" + std::to_string(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[uniform_int(rng, static_cast<int64_t>(i))]);
    size_t budget = cfg.max_cases_per_epoch > 0
                        ? std::min(order.size(),
                                   static_cast<size_t>(cfg.max_cases_per_epoch))
                        : order.size();

    for (size_t start = 0; start < budget;
         start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(budget, start + static_cast<size_t>(cfg.batch_size));
      for (Tensor& p : params) p.zero_grad();
      Tensor loss = Tensor::scalar(0.0);
      for (size_t b = start; b < end; ++b) {
        const EvalCase& ex = data.train[order[b]];
        if (ex.history.empty()) continue;
        std::vector<int64_t> hist(ex.history.begin(), ex.history.end());
        if (static_cast<int>(hist.size()) > cfg.max_len)
          hist.erase(hist.begin(),
                     hist.end() - static_cast<size_t>(cfg.max_len));
        std::vector<int> idx = to_indices(m, hist);
        Tensor states = forward(m, idx, true, &rng);
        Tensor h = slice_rows(states, states.rows() - 1, states.rows());

        std::vector<int> cands{m.item_index.at(ex.target)};
        for (int s = 0; s < cfg.negatives; ++s)
          cands.push_back(static_cast<int>(uniform_int(rng, n_items)));
        Tensor emb = embedding_lookup(m.param("embed"), cands);
        Tensor scores = matmul(h, transpose(emb));
        loss = add(loss, negate(pick(log_softmax(scores), 0)));
      }
      loss = scale(loss, 1.0 / static_cast<double>(end - start));
      backward(loss);
      opt.step();
      clear_tape();
    }
  }
  return m;
}

std::vector<std::pair<int64_t, double>> rank_items(
    const SasrecModel& m, std::span<const int64_t> history) {
  NoGradGuard ng;
  std::vector<int64_t> hist(history.begin(), history.end());
  if (static_cast<int>(hist.size()) > m.cfg.max_len)
    hist.erase(hist.begin(), hist.end() - static_cast<size_t>(m.cfg.max_len));
  std::vector<int> idx = to_indices(m, hist);
  Tensor states = forward(m, idx, false, nullptr);
  const double* h =
      states.data().data() + static_cast<size_t>(states.rows() - 1) *
                                 static_cast<size_t>(m.cfg.dim);
  const Tensor emb = m.param("embed");
  std::vector<std::pair<int64_t, double>> out;
  out.reserve(m.items.size());
  for (size_t i = 0; i < m.items.size(); ++i) {
    const double* e = emb.data().data() + i * static_cast<size_t>(m.cfg.dim);
    double s = 0.0;
    for (int j = 0; j < m.cfg.dim; ++j) s += h[j] * e[j];
    out.emplace_back(m.items[i], s);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

EmbeddingTable item_embedding_table(const SasrecModel& m) {
  EmbeddingTable out;
  const Tensor emb = m.param("embed");
  for (size_t i = 0; i < m.items.size(); ++i) {
    const double* e = emb.data().data() + i * static_cast<size_t>(m.cfg.dim);
    out.emplace(m.items[i], std::vector<double>(e, e + m.cfg.dim));
  }
  return out;
}

}  // namespace genrec
