#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace genrec {

struct Interaction {
  int64_t user = 0;
  int64_t item = 0;
  int64_t ts = 0;
};

// Iteratively drops users and items with fewer than `core` interactions
// until a fixed point; relative record order is preserved.
std::vector<Interaction> five_core_filter(std::vector<Interaction> records,
                                          int core = 5);

enum class SplitMode {
  kPerPrefix,   // every training prefix is a separate target
  kFinalOnly,   // only the final training target
};

struct EvalCase {
  int64_t user = 0;
  std::vector<int64_t> history;  // chronological, most recent last
  int64_t target = 0;
};

struct SplitDataset {
  std::vector<EvalCase> train;
  std::vector<EvalCase> validation;
  std::vector<EvalCase> test;
  std::vector<int64_t> users;  // distinct, ascending
  std::vector<int64_t> items;  // distinct, ascending
};

// Chronological leave-one-out: last item is the test target, second-to-last
// the validation target. Histories keep the most recent `max_history` items.
SplitDataset leave_one_out_split(const std::vector<Interaction>& records,
                                 SplitMode mode, int max_history = 20);

// Tab-separated "user\titem\tts", one interaction per line.
void save_interactions(const std::string& path,
                       const std::vector<Interaction>& records);
std::vector<Interaction> load_interactions(const std::string& path);

}  // namespace genrec
