#include "genrec/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "genrec/dataset.hpp"
#include "genrec/distill.hpp"
#include "genrec/embedfile.hpp"
#include "genrec/errors.hpp"
#include "genrec/metrics.hpp"
#include "genrec/rng.hpp"
#include "genrec/rq.hpp"
#include "genrec/sasrec.hpp"
#include "genrec/shapley.hpp"

namespace genrec {

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

}  // namespace

std::string interactions_file(const PipelineConfig& cfg) {
  return cfg.interactions_path.empty() ? join(cfg.out_dir, "interactions.tsv")
                                       : cfg.interactions_path;
}

std::string embeddings_file(const PipelineConfig& cfg,
                            const std::string& modality) {
  for (const auto& m : cfg.modalities)
    if (m.name == modality && !m.embeddings_path.empty())
      return m.embeddings_path;
  return join(cfg.out_dir, "embeddings." + modality + ".bin");
}

std::string codec_file(const PipelineConfig& cfg,
                       const std::string& modality) {
  return join(cfg.out_dir, "codec." + modality + ".bin");
}

std::string table_file(const PipelineConfig& cfg,
                       const std::string& modality) {
  return join(cfg.out_dir, "ids." + modality + ".tsv");
}

std::string model_file(const PipelineConfig& cfg) {
  return join(cfg.out_dir, "model.bin");
}

uint32_t full_modality_mask(const PipelineConfig& cfg) {
  return (1u << cfg.modalities.size()) - 1u;
}

namespace {

std::vector<int> modality_level_sizes(const PipelineConfig& cfg,
                                      const ModalityConfigEntry& m) {
  int levels = m.use_distill ? cfg.distill.rq_levels : cfg.rq_levels;
  int entries = m.use_distill ? cfg.distill.rq_entries : cfg.rq_entries;
  std::vector<int> sizes(levels, entries);
  sizes.push_back(cfg.collision_vocab);
  return sizes;
}

ModalityLayout single_modality_layout(const PipelineConfig& cfg,
                                      const ModalityConfigEntry& m) {
  return build_layout({{m.name, modality_level_sizes(cfg, m)}}, 0);
}

SplitDataset load_split(const PipelineConfig& cfg) {
  std::vector<Interaction> records =
      load_interactions(interactions_file(cfg));
  records = five_core_filter(records);
  return leave_one_out_split(records, cfg.split_mode,
                             cfg.model.max_history_items);
}

}  // namespace

ModalityLayout build_pipeline_layout(const PipelineConfig& cfg) {
  std::vector<ModalitySpec> specs;
  for (const auto& m : cfg.modalities)
    specs.push_back({m.name, modality_level_sizes(cfg, m)});
  return build_layout(std::move(specs), cfg.target_index());
}

void cmd_synth(const PipelineConfig& cfg, const SyntheticSpec& spec) {
  std::filesystem::create_directories(cfg.out_dir);
  SyntheticData data = generate_synthetic(spec);
  save_interactions(interactions_file(cfg), data.interactions);
  for (const auto& [name, table] : data.content_embeddings)
    save_embeddings(embeddings_file(cfg, name), table, spec.embed_dim);
}

void cmd_fit_codecs(const PipelineConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  SplitDataset split = load_split(cfg);

  for (const auto& m : cfg.modalities) {
    EmbeddingTable table;
    if (m.source == "sasrec") {
      SasrecConfig sc = cfg.sasrec;
      sc.seed = derive_seed(cfg.seed, "sasrec-" + m.name);
      SasrecModel model = train_sasrec(split, sc);
      table = item_embedding_table(model);
      save_embeddings(embeddings_file(cfg, m.name), table, sc.dim);
    } else {
      table = load_embeddings(embeddings_file(cfg, m.name));
    }

    std::vector<int64_t> ids;
    std::vector<std::vector<double>> vectors;
    ids.reserve(split.items.size());
    for (int64_t item : split.items) {
      auto it = table.find(item);
      if (it == table.end())
        throw ConfigError("modality " + m.name +
                          ": missing embedding for item " +
                          std::to_string(item));
      ids.push_back(item);
      vectors.push_back(it->second);
    }

    RqCodec codec;
    std::map<int64_t, std::vector<int>> raw_codes;
    if (m.use_distill) {
      DistillConfig dc = cfg.distill;
      dc.seed = derive_seed(cfg.seed, "distill-" + m.name);
      DistillResult dr = train_rq_dino(vectors, dc);
      for (size_t i = 0; i < ids.size(); ++i)
        raw_codes.emplace(ids[i], distill_encode(dr.state, vectors[i]));
      codec = std::move(dr.state.codec);
    } else {
      codec = RqCodec::fit(vectors, cfg.rq_levels, cfg.rq_entries,
                           cfg.lloyd_iterations,
                           derive_seed(cfg.seed, "rq-" + m.name),
                           cfg.collision_vocab);
      for (size_t i = 0; i < ids.size(); ++i)
        raw_codes.emplace(ids[i], codec.encode(vectors[i]).codes);
    }

    std::map<int64_t, std::vector<int>> full;
    try {
      full = assign_collision_levels(codec, raw_codes);
    } catch (const CollisionOverflow& e) {
      throw CollisionOverflow("modality " + m.name + ": " + e.what());
    }
    save_codec(codec_file(cfg, m.name), codec);

    ModalityLayout layout1 = single_modality_layout(cfg, m);
    std::map<int64_t, ItemCodes> rows;
    for (auto& [item, codes] : full) {
      ItemCodes ic;
      ic.item = item;
      ic.codes = {codes};
      ic.present = {true};
      ic.masked = {false};
      rows.emplace(item, std::move(ic));
    }
    save_id_table(table_file(cfg, m.name), rows, layout1);
  }
}

PipelineContext load_context(const PipelineConfig& cfg) {
  PipelineContext ctx;
  ctx.split = load_split(cfg);
  ctx.layout = build_pipeline_layout(cfg);

  const int D = static_cast<int>(cfg.modalities.size());
  std::map<int64_t, int> coverage;
  for (int d = 0; d < D; ++d) {
    const auto& m = cfg.modalities[d];
    ModalityLayout layout1 = single_modality_layout(cfg, m);
    std::map<int64_t, ItemCodes> rows =
        load_id_table(table_file(cfg, m.name), layout1);
    for (auto& [item, row] : rows) {
      ItemCodes& ic = ctx.items[item];
      if (ic.codes.empty()) {
        ic.item = item;
        ic.codes.resize(D);
        ic.present.assign(D, false);
        ic.masked.assign(D, false);
      }
      ic.codes[d] = row.codes[0];
      ic.present[d] = row.present[0];
      ++coverage[item];
    }
  }

  for (int64_t item : ctx.split.items) {
    auto it = coverage.find(item);
    if (it == coverage.end() || it->second < D)
      throw ConfigError("item " + std::to_string(item) +
                        " has no semantic-id row; rerun fit-codecs");
  }

  const int target = cfg.target_index();
  std::map<int64_t, std::vector<int>> target_codes;
  for (const auto& [item, ic] : ctx.items) {
    if (!ic.present[target])
      throw MissingTargetModality("item " + std::to_string(item));
    target_codes.emplace(item, ic.codes[target]);
  }
  ctx.trie = CodeTrie::build(target_codes);
  return ctx;
}

namespace {

ModelConfig model_config_for(const PipelineConfig& cfg,
                             const ModalityLayout& layout) {
  ModelConfig mc = cfg.model;
  mc.input_vocab = layout.vocab;
  mc.output_vocab = layout.decoder_vocab(layout.target_modality);
  mc.codes_per_item = 0;
  for (const auto& m : layout.modalities) mc.codes_per_item += m.levels();
  mc.target_len = layout.modalities[layout.target_modality].levels();
  mc.pad_token = layout.pad_id;
  mc.seed = derive_seed(cfg.seed, "model");
  return mc;
}

std::vector<TrainExample> make_examples(const PipelineContext& ctx,
                                        std::span<const EvalCase> cases,
                                        int max_items) {
  std::vector<TrainExample> out;
  out.reserve(cases.size());
  for (const EvalCase& c : cases) {
    TrainExample ex;
    size_t start = c.history.size() > static_cast<size_t>(max_items)
                       ? c.history.size() - static_cast<size_t>(max_items)
                       : 0;
    for (size_t i = start; i < c.history.size(); ++i)
      ex.history.push_back(ctx.items.at(c.history[i]));
    ex.target = ctx.items.at(c.target);
    out.push_back(std::move(ex));
  }
  return out;
}

void check_compatible(const Seq2Seq& model, const ModalityLayout& layout) {
  const ModelConfig& mc = model.config();
  int codes = 0;
  for (const auto& m : layout.modalities) codes += m.levels();
  if (mc.input_vocab != layout.vocab ||
      mc.output_vocab != layout.decoder_vocab(layout.target_modality) ||
      mc.codes_per_item != codes ||
      mc.target_len != layout.modalities[layout.target_modality].levels())
    throw IncompatibleCheckpoint(
        "checkpoint geometry does not match the semantic-id tables");
}

MetricReport eval_with_context(const PipelineConfig& cfg,
                               const PipelineContext& ctx,
                               const Seq2Seq& model, uint32_t modality_mask) {
  const int D = static_cast<int>(cfg.modalities.size());
  std::vector<const EvalCase*> cases;
  if (cfg.eval_max_cases > 0 &&
      static_cast<size_t>(cfg.eval_max_cases) < ctx.split.test.size()) {
    size_t stride = ctx.split.test.size() /
                    static_cast<size_t>(cfg.eval_max_cases);
    for (size_t i = 0; i < ctx.split.test.size() &&
                       cases.size() < static_cast<size_t>(cfg.eval_max_cases);
         i += stride)
      cases.push_back(&ctx.split.test[i]);
  } else {
    for (const auto& c : ctx.split.test) cases.push_back(&c);
  }

  const int max_items = model.config().max_history_items;
  std::vector<RankingResult> results(cases.size());
  auto run_case = [&](size_t idx) {
    const EvalCase* c = cases[idx];
    std::vector<ItemCodes> hist;
    size_t start = c->history.size() > static_cast<size_t>(max_items)
                       ? c->history.size() - static_cast<size_t>(max_items)
                       : 0;
    for (size_t i = start; i < c->history.size(); ++i) {
      ItemCodes ic = ctx.items.at(c->history[i]);
      for (int d = 0; d < D; ++d)
        if (!(modality_mask & (1u << d))) ic.masked[d] = true;
      hist.push_back(std::move(ic));
    }
    HistoryTokens tokens = assemble_history(hist, ctx.layout, max_items);
    Memory mem = model.encode(tokens);
    std::vector<ScoredItem> beams = constrained_beam_search(
        beam_step_fn(model, mem, ctx.layout), ctx.trie, cfg.beam_width);
    RankingResult& r = results[idx];
    r.gold = c->target;
    for (const ScoredItem& s : beams) r.ranked.emplace_back(s.item, s.score);
  };

  unsigned workers = cfg.eval_workers > 0
                         ? static_cast<unsigned>(cfg.eval_workers)
                         : std::max(1u, std::thread::hardware_concurrency());
  if (cases.size() < workers)
    workers = static_cast<unsigned>(std::max<size_t>(cases.size(), 1));
  if (workers <= 1) {
    NoGradGuard ng;
    for (size_t i = 0; i < cases.size(); ++i) run_case(i);
  } else {
    // Results land at their case index, so the reduction order does not
    // depend on scheduling.
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        NoGradGuard ng;
        for (size_t i = next.fetch_add(1); i < cases.size();
             i = next.fetch_add(1))
          run_case(i);
      });
    for (auto& t : pool) t.join();
  }

  MetricReport report;
  report.cases = static_cast<int>(results.size());
  for (int k : cfg.metric_ks) {
    report.entries.emplace_back("recall@" + std::to_string(k),
                                recall_at_k(results, k));
    report.entries.emplace_back("ndcg@" + std::to_string(k),
                                ndcg_at_k(results, k));
    report.entries.emplace_back("mrr@" + std::to_string(k),
                                mrr_at_k(results, k));
  }
  return report;
}

}  // namespace

TrainResult cmd_train(const PipelineConfig& cfg) {
  PipelineContext ctx = load_context(cfg);
  ModelConfig mc = model_config_for(cfg, ctx.layout);
  Seq2Seq model(mc);

  std::vector<TrainExample> train_ex =
      make_examples(ctx, ctx.split.train, mc.max_history_items);
  std::vector<TrainExample> val_ex =
      make_examples(ctx, ctx.split.validation, mc.max_history_items);

  TrainParams tp = cfg.train;
  tp.seed = derive_seed(cfg.seed, "train");
  TrainResult result = train(model, train_ex, val_ex, ctx.trie, ctx.layout, tp);

  save_model(model_file(cfg), model);
  std::ofstream log(join(cfg.out_dir, "train_log.jsonl"));
  if (!log) throw IoError("cannot write train log");
  for (const EpochRecord& r : result.history) {
    log << "{\"epoch\":" << r.epoch << ",\"split\":\"train\",\"loss\":"
        << fmt(r.train_loss) << "}\n";
    log << "{\"epoch\":" << r.epoch << ",\"split\":\"validation\",\"loss\":"
        << fmt(r.val_loss) << "}\n";
  }
  return result;
}

MetricReport cmd_eval(const PipelineConfig& cfg, const std::string& checkpoint,
                      uint32_t modality_mask) {
  PipelineContext ctx = load_context(cfg);
  Seq2Seq model = load_model(checkpoint);
  check_compatible(model, ctx.layout);
  return eval_with_context(cfg, ctx, model, modality_mask);
}

ShapleyReport cmd_ablate_shapley(const PipelineConfig& cfg,
                                 const std::string& checkpoint) {
  const int D = static_cast<int>(cfg.modalities.size());
  if (D > 6)
    throw ConfigError("shapley ablation refuses more than 6 modalities (2^D "
                      "evaluations)");
  PipelineContext ctx = load_context(cfg);
  Seq2Seq model = load_model(checkpoint);
  check_compatible(model, ctx.layout);

  const uint32_t subsets = 1u << D;
  std::vector<MetricReport> reports(subsets);
  for (uint32_t mask = 0; mask < subsets; ++mask)
    reports[mask] = eval_with_context(cfg, ctx, model, mask);

  ShapleyReport out;
  for (const auto& m : cfg.modalities) out.modalities.push_back(m.name);
  for (const auto& entry : reports[0].entries)
    out.metrics.push_back(entry.first);
  for (size_t mi = 0; mi < out.metrics.size(); ++mi) {
    std::vector<double> value(subsets);
    for (uint32_t mask = 0; mask < subsets; ++mask)
      value[mask] = reports[mask].entries[mi].second;
    out.phi.push_back(shapley_from_table(value, D));
  }
  return out;
}

std::vector<ScoredItem> cmd_decode(const PipelineConfig& cfg,
                                   const std::string& checkpoint,
                                   std::span<const int64_t> history_items,
                                   int topk) {
  PipelineContext ctx = load_context(cfg);
  Seq2Seq model = load_model(checkpoint);
  check_compatible(model, ctx.layout);

  NoGradGuard ng;
  std::vector<ItemCodes> hist;
  const int max_items = model.config().max_history_items;
  size_t start = history_items.size() > static_cast<size_t>(max_items)
                     ? history_items.size() - static_cast<size_t>(max_items)
                     : 0;
  for (size_t i = start; i < history_items.size(); ++i) {
    auto it = ctx.items.find(history_items[i]);
    if (it == ctx.items.end())
      throw IndexOutOfRange("unknown item " +
                            std::to_string(history_items[i]));
    hist.push_back(it->second);
  }
  HistoryTokens tokens = assemble_history(hist, ctx.layout, max_items);
  Memory mem = model.encode(tokens);
  std::vector<ScoredItem> beams = constrained_beam_search(
      beam_step_fn(model, mem, ctx.layout), ctx.trie, cfg.beam_width);
  if (static_cast<int>(beams.size()) > topk) beams.resize(topk);
  return beams;
}

void write_metric_report_text(const std::string& path,
                              const MetricReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "cases = " << report.cases << "\n";
  for (const auto& [key, value] : report.entries)
    f << key << " = " << fmt(value) << "\n";
}

void write_metric_report_json(const std::string& path,
                              const MetricReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "{\"cases\":" << report.cases << ",\"metrics\":{";
  for (size_t i = 0; i < report.entries.size(); ++i) {
    if (i) f << ",";
    f << "\"" << report.entries[i].first << "\":"
      << fmt(report.entries[i].second);
  }
  f << "}}\n";
}

void write_shapley_report_text(const std::string& path,
                               const ShapleyReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  for (size_t mi = 0; mi < report.metrics.size(); ++mi)
    for (size_t d = 0; d < report.modalities.size(); ++d)
      f << report.metrics[mi] << "." << report.modalities[d] << " = "
        << fmt(report.phi[mi][d]) << "\n";
}

void write_shapley_report_json(const std::string& path,
                               const ShapleyReport& report) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "{";
  for (size_t mi = 0; mi < report.metrics.size(); ++mi) {
    if (mi) f << ",";
    f << "\"" << report.metrics[mi] << "\":{";
    for (size_t d = 0; d < report.modalities.size(); ++d) {
      if (d) f << ",";
      f << "\"" << report.modalities[d] << "\":" << fmt(report.phi[mi][d]);
    }
    f << "}";
  }
  f << "}\n";
}

}  // namespace genrec
