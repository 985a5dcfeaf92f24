#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrec/config.hpp"
#include "genrec/model.hpp"
#include "genrec/synth.hpp"
#include "genrec/trie.hpp"

namespace genrec {

// Artifact locations inside the output directory.
std::string interactions_file(const PipelineConfig& cfg);
std::string embeddings_file(const PipelineConfig& cfg,
                            const std::string& modality);
std::string codec_file(const PipelineConfig& cfg, const std::string& modality);
std::string table_file(const PipelineConfig& cfg, const std::string& modality);
std::string model_file(const PipelineConfig& cfg);

// Everything train/eval need, loaded once from the on-disk artifacts.
struct PipelineContext {
  SplitDataset split;
  ModalityLayout layout;
  std::map<int64_t, ItemCodes> items;
  CodeTrie trie;
};

ModalityLayout build_pipeline_layout(const PipelineConfig& cfg);
PipelineContext load_context(const PipelineConfig& cfg);

struct MetricReport {
  std::vector<std::pair<std::string, double>> entries;
  int cases = 0;
};

struct ShapleyReport {
  std::vector<std::string> modalities;
  std::vector<std::string> metrics;
  std::vector<std::vector<double>> phi;  // [metric][modality]
};

void cmd_synth(const PipelineConfig& cfg, const SyntheticSpec& spec);
void cmd_fit_codecs(const PipelineConfig& cfg);
TrainResult cmd_train(const PipelineConfig& cfg);
// Bit d of modality_mask keeps modality d unmasked in every history item.
MetricReport cmd_eval(const PipelineConfig& cfg, const std::string& checkpoint,
                      uint32_t modality_mask);
ShapleyReport cmd_ablate_shapley(const PipelineConfig& cfg,
                                 const std::string& checkpoint);
std::vector<ScoredItem> cmd_decode(const PipelineConfig& cfg,
                                   const std::string& checkpoint,
                                   std::span<const int64_t> history_items,
                                   int topk);

uint32_t full_modality_mask(const PipelineConfig& cfg);

void write_metric_report_text(const std::string& path,
                              const MetricReport& report);
void write_metric_report_json(const std::string& path,
                              const MetricReport& report);
void write_shapley_report_text(const std::string& path,
                               const ShapleyReport& report);
void write_shapley_report_json(const std::string& path,
                               const ShapleyReport& report);

}  // namespace genrec
