#pragma once

#include <cmath>
#include <vector>

namespace ddv::testing {

using Rows = std::vector<std::vector<double>>;

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

inline double brute_divergence(const Rows& y, const Rows& y2) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += euclid(y[i], y2[i]);
  return s / y.size();
}

// Ordered double loop over i != j; every unordered pair is visited twice.
inline double brute_diversity(const Rows& y2) {
  double s = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < y2.size(); ++i) {
    for (std::size_t j = 0; j < y2.size(); ++j) {
      if (i == j) continue;
      s += euclid(y2[i], y2[j]);
      ++count;
    }
  }
  return s / count;
}

inline double brute_cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace ddv::testing
