#pragma once

// Direct-definition pass statistics over a scenario x trial table of
// booleans, written without the library's aggregate types.

#include <cstdint>
#include <vector>

namespace evatest::oracle {

using PassTable = std::vector<std::vector<bool>>;

/// Decodes bit b of `code` as trial (b % k) of scenario (b / k).
inline PassTable decode_table(std::uint32_t code, int scenarios, int k) {
  PassTable t(static_cast<std::size_t>(scenarios), std::vector<bool>(static_cast<std::size_t>(k)));
  for (int s = 0; s < scenarios; ++s)
    for (int j = 0; j < k; ++j) t[s][j] = (code >> (s * k + j)) & 1u;
  return t;
}

inline double pass1(const PassTable& t) {
  int hits = 0, total = 0;
  for (const auto& row : t)
    for (bool b : row) {
      hits += b;
      ++total;
    }
  return static_cast<double>(hits) / total;
}

inline double passk(const PassTable& t) {
  int any = 0;
  for (const auto& row : t) {
    bool hit = false;
    for (bool b : row) hit = hit || b;
    any += hit;
  }
  return static_cast<double>(any) / static_cast<double>(t.size());
}

inline double pass_pow(const PassTable& t, int k) {
  double sum = 0;
  for (const auto& row : t) {
    int hits = 0;
    for (bool b : row) hits += b;
    const double p = static_cast<double>(hits) / static_cast<double>(row.size());
    double pk = 1.0;
    for (int i = 0; i < k; ++i) pk *= p;
    sum += pk;
  }
  return sum / static_cast<double>(t.size());
}

}  // namespace evatest::oracle
