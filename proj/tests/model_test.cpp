#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "genrec/gradcheck.hpp"
#include "genrec/model.hpp"
#include "support/oracles.hpp"

using namespace genrec;

namespace {

ModalityLayout small_layout() {
  return build_layout({{"sem", {4, 4, 8}}, {"collab", {4, 4}}}, 0);
}

ModelConfig small_config(const ModalityLayout& layout, uint64_t seed) {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.head_dim = 4;
  c.ffn = 16;
  c.input_vocab = layout.vocab;
  c.output_vocab = layout.decoder_vocab(0);
  c.max_history_items = 4;
  c.codes_per_item = 5;
  c.target_len = 3;
  c.bins_across = 8;
  c.bins_within = 8;
  c.dropout = 0.0;
  c.pad_token = layout.pad_id;
  c.seed = seed;
  return c;
}

ItemCodes make_item(int64_t id, std::vector<int> sem,
                    std::vector<int> collab) {
  ItemCodes it;
  it.item = id;
  it.codes = {std::move(sem), std::move(collab)};
  it.present = {true, true};
  it.masked = {false, false};
  return it;
}

// Eight items with unique target sequences plus the trie over them.
struct Pool {
  std::vector<ItemCodes> items;
  CodeTrie trie;
};

Pool make_pool() {
  Pool p;
  std::map<int64_t, std::vector<int>> seqs;
  int64_t id = 0;
  for (int a : {0, 1}) {
    for (int b : {0, 2}) {
      for (int c : {1, 5}) {
        std::vector<int> sem = {a, b, c};
        p.items.push_back(make_item(id, sem, {a, (b + c) % 4}));
        seqs.emplace(id, sem);
        ++id;
      }
    }
  }
  p.trie = CodeTrie::build(seqs);
  return p;
}

TrainExample example_from(const Pool& p, std::initializer_list<int> hist,
                          int target) {
  TrainExample ex;
  for (int i : hist) ex.history.push_back(p.items[static_cast<size_t>(i)]);
  ex.target = p.items[static_cast<size_t>(target)];
  return ex;
}

Tensor perturbable(Seq2Seq& model, const std::string& name) {
  for (const auto& [n, t] : model.named_parameters())
    if (n == name) return t;
  REQUIRE(false);
  return Tensor();
}

}  // namespace

TEST_SUITE("seq2seq") {

TEST_CASE("relative bucket splits by sign and is exact near zero") {
  CHECK(relative_bucket(0, 8, 32) == 0);
  CHECK(relative_bucket(-1, 8, 32) == 1);
  CHECK(relative_bucket(1, 8, 32) == 5);
  for (int off = -200; off <= 200; ++off) {
    int b = relative_bucket(off, 8, 32);
    CHECK(b >= 0);
    CHECK(b < 8);
    if (off > 0)
      CHECK(b >= 4);
    else
      CHECK(b < 4);
  }
  // With 32 buckets every |offset| below half/2 = 8 gets its own bucket.
  std::set<int> seen;
  for (int off = -7; off <= 7; ++off) seen.insert(relative_bucket(off, 32, 128));
  CHECK(seen.size() == 15);
}

TEST_CASE("relative bucket is monotone in distance and saturates") {
  int prev = -1;
  for (int n = 0; n < 500; ++n) {
    int b = relative_bucket(-n, 16, 64);
    CHECK(b >= prev);
    prev = b;
  }
  CHECK(relative_bucket(-1000, 8, 32) == relative_bucket(-100000, 8, 32));
  CHECK(relative_bucket(-1000, 8, 32) == 3);
  CHECK(relative_bucket(1000, 8, 32) == 7);
  CHECK_THROWS_AS(relative_bucket(1, 3, 32), ConfigError);
}

TEST_CASE("encode produces one state row per token") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 5));
  Pool pool = make_pool();
  std::vector<ItemCodes> hist = {pool.items[0], pool.items[3]};
  HistoryTokens tokens = assemble_history(hist, layout, 4);
  REQUIRE(tokens.tokens.size() == 10);
  Memory mem = model.encode(tokens);
  CHECK(mem.states.rows() == 10);
  CHECK(mem.states.cols() == 8);
  CHECK(mem.item_index == tokens.item_index);
  CHECK(mem.level_index == tokens.level_index);
}

TEST_CASE("empty history encodes to an empty memory and decode still runs") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 5));
  HistoryTokens none;
  Memory mem = model.encode(none);
  CHECK_FALSE(mem.states.defined());
  std::vector<int> prefix = {layout.decoder_bos(0)};
  Tensor logits = model.decode(mem, prefix);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == layout.decoder_vocab(0));
}

TEST_CASE("padding tokens do not disturb real rows") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 7));
  int t0 = layout.token_id(0, 0, 1);
  int t1 = layout.token_id(0, 1, 2);

  HistoryTokens plain{{t0, t1}, {0, 0}, {0, 1}};
  HistoryTokens padded{{t0, t1, layout.pad_id, layout.pad_id},
                       {0, 0, 1, 1},
                       {0, 1, 0, 1}};
  Memory a = model.encode(plain);
  Memory b = model.encode(padded);
  REQUIRE(b.states.rows() == 4);
  double diff = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 8; ++j)
      diff = std::max(diff, std::abs(a.states.data()[i * 8 + j] -
                                     b.states.data()[i * 8 + j]));
  CHECK(diff < 1e-12);
}

TEST_CASE("decoder attention is causal") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 9));
  Pool pool = make_pool();
  HistoryTokens tokens =
      assemble_history(std::vector<ItemCodes>{pool.items[1]}, layout, 4);
  Memory mem = model.encode(tokens);

  std::vector<int> p1 = {layout.decoder_bos(0), layout.decoder_offset(0, 0) + 1,
                         layout.decoder_offset(0, 1) + 0};
  std::vector<int> p2 = p1;
  p2[2] = layout.decoder_offset(0, 1) + 2;
  Tensor l1 = model.decode(mem, p1);
  Tensor l2 = model.decode(mem, p2);
  const int v = l1.cols();
  double early = 0.0, late = 0.0;
  for (int j = 0; j < v; ++j) {
    early = std::max(early, std::abs(l1.data()[j] - l2.data()[j]));
    early = std::max(early, std::abs(l1.data()[v + j] - l2.data()[v + j]));
    late = std::max(late, std::abs(l1.data()[2 * v + j] - l2.data()[2 * v + j]));
  }
  CHECK(early < 1e-12);
  CHECK(late > 1e-6);
}

TEST_CASE("decode_step equals the last row of a full decode") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 11));
  Pool pool = make_pool();
  HistoryTokens tokens = assemble_history(
      std::vector<ItemCodes>{pool.items[2], pool.items[5]}, layout, 4);
  Memory mem = model.encode(tokens);
  std::vector<int> prefix = {layout.decoder_bos(0),
                             layout.decoder_offset(0, 0) + 1};
  Tensor full = model.decode(mem, prefix);
  std::vector<double> step = model.decode_step(mem, prefix);
  REQUIRE(static_cast<int>(step.size()) == full.cols());
  for (int j = 0; j < full.cols(); ++j)
    CHECK(step[j] == full.data()[full.cols() + j]);
}

TEST_CASE("decode rejects empty and overlong prefixes") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 3));
  Memory mem;
  CHECK_THROWS_AS(model.decode(mem, std::vector<int>{}), EmptyInput);
  std::vector<int> too_long(4, layout.decoder_bos(0));
  CHECK_THROWS_AS(model.decode(mem, too_long), PrefixTooLong);
}

TEST_CASE("encode rejects token budgets beyond the history cap") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 3));
  HistoryTokens huge;
  huge.tokens.assign(21, layout.pad_id);
  huge.item_index.assign(21, 0);
  huge.level_index.assign(21, 0);
  CHECK_THROWS_AS(model.encode(huge), SequenceTooLong);
}

TEST_CASE("a single-path trie drives the constrained loss to exactly zero") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 13));
  Pool pool = make_pool();
  std::map<int64_t, std::vector<int>> one = {{4, pool.items[4].codes[0]}};
  CodeTrie trie = CodeTrie::build(one);
  TrainExample ex;
  ex.history = {pool.items[0]};
  ex.target = pool.items[4];
  Rng rng = make_rng(1, "loss");
  Tensor loss = model.training_loss({&ex, 1}, trie, layout, 0.0, rng, true,
                                    false);
  CHECK(loss.item() == 0.0);
}

TEST_CASE("zeroed output projection recovers the children-count loss") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 17));
  std::map<int64_t, std::vector<int>> seqs = {
      {0, {0, 0, 0}}, {1, {0, 0, 1}}, {2, {1, 2, 3}}};
  CodeTrie trie = CodeTrie::build(seqs);

  Tensor proj = perturbable(model, "out.proj");
  std::fill(proj.mutable_data().begin(), proj.mutable_data().end(), 0.0);

  TrainExample ex;
  ex.history = {make_item(2, {1, 2, 3}, {1, 1})};
  ex.target = make_item(0, {0, 0, 0}, {0, 0});
  Rng rng = make_rng(2, "loss");
  Tensor loss = model.training_loss({&ex, 1}, trie, layout, 0.0, rng, true,
                                    false);
  // Level children sets along the gold path have sizes 2, 1, 2.
  CHECK(loss.item() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("weights on non-permissible columns cannot move the constrained loss") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 19));
  std::map<int64_t, std::vector<int>> seqs = {
      {0, {0, 0, 0}}, {1, {0, 0, 1}}, {2, {1, 2, 3}}};
  CodeTrie trie = CodeTrie::build(seqs);
  TrainExample ex;
  ex.history = {make_item(2, {1, 2, 3}, {1, 1})};
  ex.target = make_item(0, {0, 0, 0}, {0, 0});

  auto eval = [&](bool constrained) {
    Rng rng = make_rng(3, "loss");
    return model
        .training_loss({&ex, 1}, trie, layout, 0.0, rng, constrained, false)
        .item();
  };
  double before_c = eval(true);
  double before_u = eval(false);

  // Gold path children: level 0 -> {0,1}, level 1 -> {0}, level 2 -> {0,1}.
  std::vector<int> untouchable = {layout.decoder_pad(0), layout.decoder_bos(0),
                                  layout.decoder_eos(0)};
  for (int c : {2, 3}) untouchable.push_back(layout.decoder_offset(0, 0) + c);
  for (int c : {1, 2, 3}) untouchable.push_back(layout.decoder_offset(0, 1) + c);
  for (int c = 2; c < 8; ++c)
    untouchable.push_back(layout.decoder_offset(0, 2) + c);

  // Bumping one row (not the whole column) keeps the shift visible to the
  // full softmax: layer-normed states sum to ~0, so uniform column offsets
  // would cancel out of every logit.
  Tensor proj = perturbable(model, "out.proj");
  auto w = proj.mutable_data();
  for (int c : untouchable) w[c] += 7.5;

  CHECK(eval(true) == before_c);
  CHECK(std::abs(eval(false) - before_u) > 1e-6);
}

TEST_CASE("constrained loss never exceeds the unconstrained loss") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 23));
  Pool pool = make_pool();
  std::vector<TrainExample> batch = {
      example_from(pool, {0, 1}, 2), example_from(pool, {3}, 7),
      example_from(pool, {5, 6, 1}, 0), example_from(pool, {7, 2}, 4)};
  Rng r1 = make_rng(4, "loss");
  Rng r2 = make_rng(4, "loss");
  double c =
      model.training_loss(batch, pool.trie, layout, 0.0, r1, true, false)
          .item();
  double u =
      model.training_loss(batch, pool.trie, layout, 0.0, r2, false, false)
          .item();
  CHECK(c <= u + 1e-12);
}

TEST_CASE("training loss gradients match central differences") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 29));
  Pool pool = make_pool();
  std::vector<TrainExample> batch = {example_from(pool, {1, 6}, 3),
                                     example_from(pool, {4}, 5)};
  std::vector<Tensor> params = model.parameters();
  for (bool constrained : {true, false}) {
    double err = grad_check_params(
        [&]() {
          Rng rng = make_rng(5, "loss");
          return model.training_loss(batch, pool.trie, layout, 0.0, rng,
                                     constrained, false);
        },
        params, 1e-4);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("beam over model scores matches exhaustive enumeration") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 31));
  Pool pool = make_pool();
  std::map<int64_t, std::vector<int>> seqs;
  for (const ItemCodes& it : pool.items) seqs.emplace(it.item, it.codes[0]);

  HistoryTokens tokens = assemble_history(
      std::vector<ItemCodes>{pool.items[3], pool.items[0]}, layout, 4);
  Memory mem = model.encode(tokens);
  StepFn fn = beam_step_fn(model, mem, layout);

  auto beam = constrained_beam_search(fn, pool.trie, 8);
  auto oracle = testsupport::enumerate_leaf_scores(seqs, fn);
  REQUIRE(beam.size() == oracle.size());
  double total = 0.0;
  for (size_t i = 0; i < beam.size(); ++i) {
    CHECK(beam[i].item == oracle[i].item);
    CHECK(std::abs(beam[i].score - oracle[i].score) < 1e-10);
    total += std::exp(beam[i].score);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("training reduces the loss and restores the best parameters") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 37));
  Pool pool = make_pool();
  std::vector<TrainExample> train_set, val_set;
  Rng rng = make_rng(6, "fixture");
  for (int i = 0; i < 24; ++i) {
    TrainExample ex;
    int target = static_cast<int>(uniform_int(rng, 8));
    ex.history = {pool.items[static_cast<size_t>(uniform_int(rng, 8))],
                  pool.items[static_cast<size_t>(target)]};
    ex.target = pool.items[static_cast<size_t>(target)];
    (i % 4 == 0 ? val_set : train_set).push_back(ex);
  }

  TrainParams tp;
  tp.epochs = 4;
  tp.patience = 10;
  tp.batch_size = 6;
  tp.lr = 5e-3;
  tp.masking_p = 0.5;
  tp.seed = 41;
  TrainResult res = train(model, train_set, val_set, pool.trie, layout, tp);
  REQUIRE(res.history.size() == 4);
  CHECK(res.history.back().train_loss < res.history.front().train_loss);

  int argmin = 0;
  for (size_t i = 1; i < res.history.size(); ++i)
    if (res.history[i].val_loss < res.history[argmin].val_loss)
      argmin = static_cast<int>(i);
  CHECK(res.best_epoch == argmin);
  CHECK(res.best_val_loss == res.history[argmin].val_loss);

  // The returned model must sit at the best-validation snapshot.
  NoGradGuard ng;
  Rng quiet = make_rng(tp.seed, "validation");
  double total = 0.0;
  for (const TrainExample& ex : val_set)
    total += model
                 .training_loss({&ex, 1}, pool.trie, layout, 0.0, quiet,
                                tp.constrained, false)
                 .item();
  CHECK(total / val_set.size() ==
        doctest::Approx(res.best_val_loss).epsilon(1e-12));
}

TEST_CASE("training twice from the same seed is bit-identical") {
  ModalityLayout layout = small_layout();
  Pool pool = make_pool();
  std::vector<TrainExample> train_set = {
      example_from(pool, {0, 1}, 2), example_from(pool, {3}, 7),
      example_from(pool, {5, 6}, 0), example_from(pool, {7}, 4),
      example_from(pool, {2, 4}, 6), example_from(pool, {1}, 5)};
  std::vector<TrainExample> val_set = {example_from(pool, {0}, 3),
                                       example_from(pool, {6, 2}, 1)};
  TrainParams tp;
  tp.epochs = 2;
  tp.batch_size = 3;
  tp.seed = 43;

  auto run = [&]() {
    Seq2Seq model(small_config(layout, 47));
    return train(model, train_set, val_set, pool.trie, layout, tp);
  };
  TrainResult a = run();
  TrainResult b = run();
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_loss == b.history[i].val_loss);
  }
}

TEST_CASE("zero patience stops after the first regression") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 53));
  Pool pool = make_pool();
  std::vector<TrainExample> train_set = {example_from(pool, {0}, 1),
                                         example_from(pool, {2}, 3)};
  std::vector<TrainExample> val_set = {example_from(pool, {4}, 5)};
  TrainParams tp;
  tp.epochs = 50;
  tp.patience = 0;
  tp.batch_size = 2;
  tp.lr = 0.2;  // aggressive on purpose, the val loss will bounce
  tp.seed = 11;
  TrainResult res = train(model, train_set, val_set, pool.trie, layout, tp);
  CHECK(res.history.size() < 50);
  size_t stop = res.history.size() - 1;
  CHECK(res.history[stop].val_loss >= res.best_val_loss);
  CHECK(res.best_epoch == static_cast<int>(stop) - 1);
}

TEST_CASE("checkpoints round trip through single precision") {
  ModalityLayout layout = small_layout();
  Seq2Seq model(small_config(layout, 59));
  std::string path = "model_test_ckpt.bin";
  save_model(path, model);
  Seq2Seq loaded = load_model(path);

  CHECK(loaded.config().heads == model.config().heads);
  CHECK(loaded.config().input_vocab == model.config().input_vocab);
  const auto& a = model.named_parameters();
  const auto& b = loaded.named_parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    REQUIRE(a[i].second.size() == b[i].second.size());
    for (int64_t j = 0; j < a[i].second.size(); ++j)
      CHECK(static_cast<double>(static_cast<float>(a[i].second.data()[j])) ==
            b[i].second.data()[j]);
  }

  std::string again = "model_test_ckpt2.bin";
  save_model(again, loaded);
  std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  std::remove(path.c_str());
  std::remove(again.c_str());
}

TEST_CASE("corrupted checkpoints are refused") {
  std::string path = "model_test_bad.bin";
  std::ofstream(path, std::ios::binary) << "not a checkpoint at all";
  CHECK_THROWS_AS(load_model(path), IncompatibleCheckpoint);
  std::remove(path.c_str());
}

}  // TEST_SUITE
