#pragma once

// Depth metrics (RMSE, delta 1.25, ordinal error), IOU, masked code accuracy
// and the serialized evaluation report.

#include "json.hpp"  // vendored nlohmann/json

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "synthprobe/errors.hpp"

namespace synthprobe {

inline constexpr double kRatioEps = 1e-6;

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* metric) {
  if (a != b) {
    throw DimensionError(std::string(metric) + ": size mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}
}  // namespace detail

inline double rmse(std::span<const float> pred, std::span<const float> gt) {
  detail::require_same_size(pred.size(), gt.size(), "rmse");
  if (gt.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = double(pred[i]) - double(gt[i]);
    s += d * d;
  }
  return std::sqrt(s / double(gt.size()));
}

/// Fraction of pixels with max(pred/gt, gt/pred) > 1.25; pred clamped to >= eps.
inline double delta_125(std::span<const float> pred, std::span<const float> gt, double eps = kRatioEps) {
  detail::require_same_size(pred.size(), gt.size(), "delta_125");
  if (gt.empty()) return 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double p = std::max(double(pred[i]), eps), g = double(gt[i]);
    bad += std::max(p / g, g / p) > 1.25;
  }
  return double(bad) / double(gt.size());
}

/// Fixed set of pixel pairs shared by every model evaluated on one image size.
struct PairSet {
  std::uint64_t seed = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::array<std::uint32_t, 4>> pairs;  // (i1, j1, i2, j2)

  /// Uniform with replacement over pixels; pairs of identical pixels are redrawn.
  static PairSet sample(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t count = 50000) {
    if (height * width < 2) throw ConfigError("pair set: need at least two pixels");
    PairSet ps{seed, height, width, {}};
    ps.pairs.reserve(count);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint32_t> row(0, std::uint32_t(height - 1)), col(0, std::uint32_t(width - 1));
    while (ps.pairs.size() < count) {
      const std::array<std::uint32_t, 4> p{row(rng), col(rng), row(rng), col(rng)};
      if (p[0] != p[2] || p[1] != p[3]) ps.pairs.push_back(p);
    }
    return ps;
  }
};

/// Depth-order label of the pair (first vs second pixel).
inline int ordinal_label(double first, double second, double tau) {
  const double r = first / second;
  if (r >= 1.0 + tau) return 1;
  if (r <= 1.0 / (1.0 + tau)) return -1;
  return 0;
}

/// Fraction of pairs whose order label from pred differs from the one from gt.
inline double ordinal_error(std::span<const float> pred, std::span<const float> gt, const PairSet& pairs,
                            double tau = 0.03, double eps = kRatioEps) {
  detail::require_same_size(pred.size(), gt.size(), "ordinal_error");
  detail::require_same_size(gt.size(), pairs.height * pairs.width, "ordinal_error (pair set image size)");
  if (pairs.pairs.empty()) return 0.0;
  std::size_t mismatched = 0;
  for (const auto& p : pairs.pairs) {
    if (p[0] >= pairs.height || p[2] >= pairs.height || p[1] >= pairs.width || p[3] >= pairs.width) {
      throw UsageError("ordinal_error: pair out of bounds");
    }
    const std::size_t a = p[0] * pairs.width + p[1], b = p[2] * pairs.width + p[3];
    const int l = ordinal_label(double(gt[a]), double(gt[b]), tau);
    const int lh = ordinal_label(std::max(double(pred[a]), eps), std::max(double(pred[b]), eps), tau);
    mismatched += l != lh;
  }
  return double(mismatched) / double(pairs.pairs.size());
}

/// |pred and gt| / |pred or gt| over binary maps (nonzero = set); 1 when both are empty.
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  detail::require_same_size(pred.size(), gt.size(), "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

/// Accuracy over positions whose code was hidden (given == 0).
inline double masked_accuracy(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> target,
                              std::span<const std::uint8_t> given) {
  detail::require_same_size(pred.size(), target.size(), "masked_accuracy");
  detail::require_same_size(given.size(), target.size(), "masked_accuracy (mask)");
  std::size_t hidden = 0, correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (given[i]) continue;
    ++hidden;
    correct += pred[i] == target[i];
  }
  return hidden == 0 ? 1.0 : double(correct) / double(hidden);
}

inline double generalization_gap(double test_loss, double train_loss) { return test_loss - train_loss; }

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& metric_vocabulary() {
  static const std::vector<std::string> v = {"iou", "masked_accuracy", "loss", "rmse", "delta_125", "ord"};
  return v;
}

struct EvalReport {
  std::string split;
  std::size_t samples = 0;
  std::uint64_t pair_seed = 0;
  std::map<std::string, double> metrics;

  void set(const std::string& name, double value) {
    const auto& vocab = metric_vocabulary();
    if (std::find(vocab.begin(), vocab.end(), name) == vocab.end()) throw UsageError("unknown metric name: " + name);
    if (!std::isfinite(value)) throw NumericError("metric " + name + " is not finite");
    metrics[name] = value;
  }

  [[nodiscard]] double at(const std::string& name) const {
    auto it = metrics.find(name);
    if (it == metrics.end()) throw DataError("report for split '" + split + "' has no metric " + name);
    return it->second;
  }
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"split", r.split}, {"samples", r.samples}, {"pair_seed", r.pair_seed}, {"metrics", r.metrics}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  r = EvalReport{};
  r.split = j.at("split").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  r.pair_seed = j.value("pair_seed", std::uint64_t{0});
  for (const auto& [k, v] : j.at("metrics").items()) r.set(k, v.get<double>());
}

}  // namespace synthprobe
