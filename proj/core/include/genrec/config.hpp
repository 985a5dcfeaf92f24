#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "genrec/dataset.hpp"
#include "genrec/distill.hpp"
#include "genrec/model.hpp"
#include "genrec/sasrec.hpp"
#include "genrec/synth.hpp"

namespace genrec {

// Flat dotted-key configuration: "key = value" lines, '#' comments.
// Environment variables override file values: GENREC_TRAIN__BATCH_SIZE=8
// sets train.batch_size ("__" becomes the dot, names lowercased).
class Config {
 public:
  static Config load(const std::string& path);
  static Config from_string(const std::string& text);

  void apply_env(const char* prefix = "GENREC_");
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<std::string> get_list(const std::string& key,
                                    const std::string& dflt) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

struct ModalityConfigEntry {
  std::string name;
  std::string source = "file";  // "file" or "sasrec" (trained collaborative)
  std::string embeddings_path;  // empty: out_dir/embeddings.<name>.bin
  bool use_distill = false;     // route the codec fit through RQ-DINO
};

struct PipelineConfig {
  std::string interactions_path;
  std::string out_dir = "out";
  std::vector<ModalityConfigEntry> modalities;
  std::string target_modality;

  int rq_levels = 2;
  int rq_entries = 32;
  int collision_vocab = 64;
  int lloyd_iterations = 25;

  ModelConfig model;    // vocab and geometry fields filled at build time
  TrainParams train;
  SasrecConfig sasrec;
  DistillConfig distill;

  SplitMode split_mode = SplitMode::kFinalOnly;
  int beam_width = 20;
  std::vector<int> metric_ks = {1, 5, 10};
  int eval_max_cases = 0;  // 0 = every test case
  int eval_workers = 0;    // 0 = hardware concurrency

  uint64_t seed = 0;

  int target_index() const;  // position of target_modality in modalities
};

PipelineConfig parse_pipeline_config(const Config& c);
SyntheticSpec parse_synth_spec(const Config& c);

}  // namespace genrec
