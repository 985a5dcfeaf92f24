#include "genrec/shapley.hpp"

#include <bit>

#include "genrec/errors.hpp"

namespace genrec {

std::vector<double> shapley_from_table(std::span<const double> value, int D) {
  if (D < 1) throw ConfigError("need at least one modality");
  if (D > 10) throw ConfigError("exact Shapley refuses D > 10 modalities");
  const uint32_t subsets = 1u << D;
  if (value.size() != subsets)
    throw DimensionMismatch("value table needs one entry per subset");

  std::vector<double> fact(D + 1, 1.0);
  for (int i = 1; i <= D; ++i) fact[i] = fact[i - 1] * i;

  std::vector<double> phi(D, 0.0);
  for (int d = 0; d < D; ++d) {
    const uint32_t bit = 1u << d;
    for (uint32_t s = 0; s < subsets; ++s) {
      if (s & bit) continue;
      int size = std::popcount(s);
      double w = fact[size] * fact[D - size - 1] / fact[D];
      phi[d] += w * (value[s | bit] - value[s]);
    }
  }
  return phi;
}

std::vector<double> shapley_modalities(
    const std::function<double(uint32_t mask)>& v, int D) {
  if (D < 1) throw ConfigError("need at least one modality");
  if (D > 10) throw ConfigError("exact Shapley refuses D > 10 modalities");
  std::vector<double> table(1u << D);
  for (uint32_t s = 0; s < table.size(); ++s) table[s] = v(s);
  return shapley_from_table(table, D);
}

}  // namespace genrec
