#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace genrec {

// Exact Shapley attribution by full subset enumeration:
//   phi_d = sum over S not containing d of |S|!(D-|S|-1)!/D! (v(S+{d}) - v(S)).
// `value` is indexed by subset bitmask, length 2^D. Refuses D > 10.
std::vector<double> shapley_from_table(std::span<const double> value, int D);

// Convenience wrapper that evaluates v once per subset mask.
std::vector<double> shapley_modalities(
    const std::function<double(uint32_t mask)>& v, int D);

}  // namespace genrec
