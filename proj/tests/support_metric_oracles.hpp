#pragma once

// Naive-loop metric oracles over 2D indexing, in long double.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "synthprobe/metrics.hpp"

namespace synthprobe::testing {

inline long double oracle_rmse(const std::vector<float>& p, const std::vector<float>& g, int h, int w) {
  long double s = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      long double d = (long double)p[std::size_t(i * w + j)] - g[std::size_t(i * w + j)];
      s += d * d;
    }
  return std::sqrt(s / (h * w));
}

inline long double oracle_delta(const std::vector<float>& p, const std::vector<float>& g, int h, int w) {
  int count = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      long double ph = p[std::size_t(i * w + j)] < 1e-6f ? 1e-6L : (long double)p[std::size_t(i * w + j)];
      long double gv = g[std::size_t(i * w + j)];
      if (ph / gv > 1.25L || gv / ph > 1.25L) ++count;
    }
  return (long double)count / (h * w);
}

inline int oracle_label(long double a, long double b) {
  if (a / b >= 1.03L) return 1;
  if (a / b <= 1.0L / 1.03L) return -1;
  return 0;
}

inline long double oracle_ord(const std::vector<float>& p, const std::vector<float>& g, int w, const PairSet& ps) {
  int bad = 0;
  for (const auto& q : ps.pairs) {
    auto idx = [&](std::uint32_t i, std::uint32_t j) { return std::size_t(i) * std::size_t(w) + j; };
    auto clamp = [](float v) { return v < 1e-6f ? 1e-6L : (long double)v; };
    int l = oracle_label(g[idx(q[0], q[1])], g[idx(q[2], q[3])]);
    int lh = oracle_label(clamp(p[idx(q[0], q[1])]), clamp(p[idx(q[2], q[3])]));
    bad += l != lh;
  }
  return (long double)bad / ps.pairs.size();
}

inline std::vector<float> random_depth(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> lab(1, 6);
  std::vector<float> v(n);
  for (auto& x : v) x = float(lab(rng));
  return v;
}

inline std::vector<float> noisy(std::mt19937_64& rng, const std::vector<float>& g) {
  std::normal_distribution<float> n(0.f, 0.6f);
  std::vector<float> v(g);
  for (auto& x : v) x += n(rng);
  return v;
}


inline double oracle_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int h, int w) {
  int inter = 0, uni = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      inter += a[std::size_t(i * w + j)] && b[std::size_t(i * w + j)];
      uni += a[std::size_t(i * w + j)] || b[std::size_t(i * w + j)];
    }
  return uni ? double(inter) / uni : 1.0;
}

inline double oracle_masked(const std::vector<std::uint16_t>& pred, const std::vector<std::uint16_t>& target,
                            const std::vector<std::uint8_t>& given) {
  int hidden = 0, right = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (given[i] == 0) ++hidden, right += pred[i] == target[i];
  return hidden ? double(right) / hidden : 1.0;
}

}  // namespace synthprobe::testing
