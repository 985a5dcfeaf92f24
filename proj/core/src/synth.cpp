#include "genrec/synth.hpp"

#include <cmath>

#include "genrec/errors.hpp"
#include "genrec/rng.hpp"

namespace genrec {

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.items <= 0 || spec.clusters <= 0 || spec.users <= 0 ||
      spec.hierarchy_depth <= 0 || spec.branching <= 0 || spec.embed_dim <= 0)
    throw ConfigError("synthetic counts must be positive");
  if (spec.min_seq < 1 || spec.max_seq < spec.min_seq)
    throw ConfigError("bad sequence-length range");
  if (spec.locality < 0.0 || spec.locality > 1.0)
    throw ConfigError("locality must lie in [0,1]");
  if (spec.modality_names.size() != spec.noise_scales.size())
    throw ConfigError("one noise scale per modality");

  SyntheticData out;

  // Leaf clusters: top centers spread at cluster_sep, each split into
  // branching^depth-1 sub-centers offset at sub_sep.
  int leaves_per_top = 1;
  for (int d = 1; d < spec.hierarchy_depth; ++d)
    leaves_per_top *= spec.branching;
  const int leaf_count = spec.clusters * leaves_per_top;

  Rng geo = make_rng(spec.seed, "synth-geometry");
  std::vector<std::vector<double>> leaf_center(
      leaf_count, std::vector<double>(spec.embed_dim));
  for (int top = 0; top < spec.clusters; ++top) {
    std::vector<double> base(spec.embed_dim);
    for (auto& v : base) v = spec.cluster_sep * normal(geo);
    for (int sub = 0; sub < leaves_per_top; ++sub) {
      auto& c = leaf_center[top * leaves_per_top + sub];
      for (int j = 0; j < spec.embed_dim; ++j)
        c[j] = base[j] + (leaves_per_top > 1 ? spec.sub_sep * normal(geo)
                                             : 0.0);
    }
  }

  out.item_cluster.resize(spec.items);
  std::vector<int> item_leaf(spec.items);
  std::vector<std::vector<int64_t>> cluster_items(spec.clusters);
  for (int i = 0; i < spec.items; ++i) {
    item_leaf[i] = i % leaf_count;
    out.item_cluster[i] = item_leaf[i] / leaves_per_top;
    cluster_items[out.item_cluster[i]].push_back(i);
  }

  for (size_t m = 0; m < spec.modality_names.size(); ++m) {
    Rng noise = make_rng(spec.seed, "synth-" + spec.modality_names[m]);
    EmbeddingTable table;
    for (int i = 0; i < spec.items; ++i) {
      std::vector<double> v = leaf_center[item_leaf[i]];
      for (auto& x : v) x += spec.noise_scales[m] * normal(noise);
      table.emplace(i, std::move(v));
    }
    out.content_embeddings.emplace(spec.modality_names[m], std::move(table));
  }

  Rng walk = make_rng(spec.seed, "synth-walk");
  for (int u = 0; u < spec.users; ++u) {
    int len = spec.min_seq +
              static_cast<int>(uniform_int(walk, spec.max_seq - spec.min_seq + 1));
    int64_t cur = uniform_int(walk, spec.items);
    for (int t = 0; t < len; ++t) {
      out.interactions.push_back({u, cur, t});
      if (spec.deterministic_cycle) {
        cur = (cur + 1) % spec.items;
      } else if (uniform_double(walk) < spec.locality) {
        const auto& pool = cluster_items[out.item_cluster[cur]];
        cur = pool[uniform_int(walk, static_cast<int64_t>(pool.size()))];
      } else {
        cur = uniform_int(walk, spec.items);
      }
    }
  }
  return out;
}

}  // namespace genrec
