// Brute-force split-conformal quantile oracles. Test use only.

#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

// Sort-and-index over the scores augmented with +inf; the first rank p with
// p >= (n + 1)(1 - delta), allowing for representation error.
inline double conformal_quantile(std::vector<double> s, double delta) {
  s.push_back(std::numeric_limits<double>::infinity());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size() - 1);
  for (std::size_t p = 1; p <= s.size(); ++p)
    if (static_cast<double>(p) >= (n + 1.0) * (1.0 - delta) - 1e-9) return s[p - 1];
  return s.back();
}

// Exact integer form for delta = k / 1000: p = ceil((n + 1)(1000 - k) / 1000).
inline double conformal_quantile_permille(std::vector<double> s, long long k) {
  std::sort(s.begin(), s.end());
  const long long n = static_cast<long long>(s.size());
  const long long num = (n + 1) * (1000 - k);
  const long long p = (num + 999) / 1000;
  if (p > n) return std::numeric_limits<double>::infinity();
  return s[static_cast<std::size_t>(p - 1)];
}

}  // namespace oracle
