#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "genrec/dataset.hpp"
#include "genrec/embedfile.hpp"

namespace genrec {

struct SyntheticSpec {
  int items = 2000;
  int clusters = 8;         // top-level clusters
  int hierarchy_depth = 2;  // levels of cluster structure
  int branching = 4;        // sub-clusters per node below the top level
  int users = 5000;
  int min_seq = 5;
  int max_seq = 12;
  double locality = 0.9;  // probability a transition stays in-cluster
  std::vector<std::string> modality_names = {"image"};
  std::vector<double> noise_scales = {0.5};
  int embed_dim = 8;
  double cluster_sep = 10.0;
  double sub_sep = 3.0;
  // Successor of item i is fixed to (i+1) mod items; histories then determine
  // the next item exactly.
  bool deterministic_cycle = false;
  uint64_t seed = 0;
};

struct SyntheticData {
  std::vector<Interaction> interactions;
  std::map<std::string, EmbeddingTable> content_embeddings;
  std::vector<int> item_cluster;  // top-level label per item id
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace genrec
