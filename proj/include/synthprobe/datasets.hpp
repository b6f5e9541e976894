#pragma once

// Synthetic dataset generators: rectangle depth scenes (with the unambiguity
// verifier and an image-only solver), Centered Square, and Color Code.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "synthprobe/errors.hpp"
#include "synthprobe/tensor.hpp"

namespace synthprobe {

// ---------------------------------------------------------------------------
// Seeds

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Per-sample seed, independent of how samples are scheduled over threads.
constexpr std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed ^ (index * 0x9E3779B97F4A7C15ull));
}

// ---------------------------------------------------------------------------
// Rectangle depth estimation

using Rgb = std::array<std::uint8_t, 3>;

/// `count` hues evenly spaced on the color wheel at full saturation and value.
inline std::vector<Rgb> hue_palette(std::size_t count = 10) {
  std::vector<Rgb> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double h = 6.0 * double(i) / double(count);  // sector units
    const int sector = int(h) % 6;
    const double f = h - std::floor(h);
    const double v = 1.0, p = 0.0, q = 1.0 - f, t = f;
    double r = 0, g = 0, b = 0;
    switch (sector) {
      case 0: r = v, g = t, b = p; break;
      case 1: r = q, g = v, b = p; break;
      case 2: r = p, g = v, b = t; break;
      case 3: r = p, g = q, b = v; break;
      case 4: r = t, g = p, b = v; break;
      default: r = v, g = p, b = q; break;
    }
    auto u8 = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
    out.push_back({u8(r), u8(g), u8(b)});
  }
  return out;
}

/// Inclusive pixel bounds. Geometric edges sit at x0, x1 + 1 (and y0, y1 + 1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int z = 0;          // higher is on top
  int color_idx = 0;  // palette index

  [[nodiscard]] bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  [[nodiscard]] long area() const { return long(x1 - x0 + 1) * long(y1 - y0 + 1); }
  friend bool operator==(const Rect&, const Rect&) = default;
};

inline bool overlaps(const Rect& a, const Rect& b) {
  return a.x0 <= b.x1 && b.x0 <= a.x1 && a.y0 <= b.y1 && b.y0 <= a.y1;
}

/// True when two rects share a geometric edge coordinate on either axis.
inline bool aligned(const Rect& a, const Rect& b) {
  const int ax[2] = {a.x0, a.x1 + 1}, bx[2] = {b.x0, b.x1 + 1};
  const int ay[2] = {a.y0, a.y1 + 1}, by[2] = {b.y0, b.y1 + 1};
  for (int i : {0, 1})
    for (int j : {0, 1})
      if (ax[i] == bx[j] || ay[i] == by[j]) return true;
  return false;
}

struct RdeConfig {
  int width = 128;
  int height = 128;
  int n_rects = 10;
  std::vector<Rgb> palette = hue_palette(10);
  Rgb background{32, 32, 32};
  int min_side = 12;
  int max_side = 96;
  double min_visible_frac = 0.05;
  int max_retries = 10000;
  bool filter = true;  // false emits raw, possibly ambiguous scenes

  void validate() const {
    if (width < 2 || height < 2) throw ConfigError("rde: image must be at least 2x2");
    if (n_rects < 0) throw ConfigError("rde: n_rects must be non-negative");
    if (std::size_t(n_rects) > palette.size()) {
      throw ConfigError("rde: n_rects (" + std::to_string(n_rects) + ") exceeds palette size (" +
                        std::to_string(palette.size()) + ")");
    }
    if (min_side < 2 || max_side < min_side) throw ConfigError("rde: need 2 <= min_side <= max_side");
    if (min_side > std::min(width, height)) throw ConfigError("rde: min_side exceeds image size");
    if (std::find(palette.begin(), palette.end(), background) != palette.end()) {
      throw ConfigError("rde: background color collides with the palette");
    }
    if (max_retries <= 0) throw ConfigError("rde: max_retries must be positive");
  }
};

struct Scene {
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;
  std::vector<Rect> rects;           // ascending z
  std::vector<std::uint8_t> image;   // H x W x 3
  std::vector<std::uint16_t> label;  // H x W, 1 + coverage count
  std::vector<int> top;              // H x W, index into rects of the visible rect, -1 for background
};

/// Painter's algorithm over `rects` sorted by ascending z.
inline Scene render_scene(std::vector<Rect> rects, int width, int height, const std::vector<Rgb>& palette,
                          const Rgb& background) {
  std::stable_sort(rects.begin(), rects.end(), [](const Rect& a, const Rect& b) { return a.z < b.z; });
  Scene s;
  s.width = width;
  s.height = height;
  s.rects = std::move(rects);
  const std::size_t npix = std::size_t(width) * std::size_t(height);
  s.top.assign(npix, -1);
  s.label.assign(npix, 1);
  for (std::size_t r = 0; r < s.rects.size(); ++r) {
    const Rect& q = s.rects[r];
    if (q.color_idx < 0 || std::size_t(q.color_idx) >= palette.size()) throw ConfigError("rde: color index out of palette");
    for (int y = std::max(q.y0, 0); y <= std::min(q.y1, height - 1); ++y)
      for (int x = std::max(q.x0, 0); x <= std::min(q.x1, width - 1); ++x) {
        const std::size_t i = std::size_t(y) * std::size_t(width) + std::size_t(x);
        s.top[i] = int(r);
        ++s.label[i];
      }
  }
  s.image.resize(npix * 3);
  for (std::size_t i = 0; i < npix; ++i) {
    const Rgb& c = s.top[i] < 0 ? background : palette[std::size_t(s.rects[std::size_t(s.top[i])].color_idx)];
    std::copy(c.begin(), c.end(), s.image.begin() + std::ptrdiff_t(3 * i));
  }
  return s;
}

struct TJunction {
  int x = 0, y = 0;  // lattice vertex (geometric coordinates)
  int upper = 0;     // indices into the rect list
  int lower = 0;
  friend bool operator==(const TJunction&, const TJunction&) = default;
};

/// Crossings of an edge of one rect with an edge of another, strictly inside
/// both edges, where the rendered pixels around the vertex show the upper rect
/// on both sides of its edge and the lower rect continuing outside it. Uses
/// only rect extents and the visible-rect raster, so it also runs on rects
/// recovered from an image.
inline std::vector<TJunction> find_tjunctions(const std::vector<Rect>& rects, const std::vector<int>& top, int width,
                                              int height) {
  std::vector<TJunction> out;
  auto at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= width || y >= height) return -2;
    return top[std::size_t(y) * std::size_t(width) + std::size_t(x)];
  };
  // Vertical edge of `lo` at X crossing horizontal edge of `up` at Y.
  auto probe = [&](int up, int lo, int X, bool lo_left_edge, int Y, bool up_top_edge, bool transposed) {
    // Pixel column inside / outside the vertical edge, pixel row inside / outside the horizontal edge.
    const int in_v = lo_left_edge ? X : X - 1, out_v = lo_left_edge ? X - 1 : X;
    const int in_h = up_top_edge ? Y : Y - 1, out_h = up_top_edge ? Y - 1 : Y;
    auto px = [&](int v, int h) { return transposed ? at(h, v) : at(v, h); };
    if (px(in_v, in_h) == up && px(out_v, in_h) == up && px(in_v, out_h) == lo) {
      out.push_back(transposed ? TJunction{Y, X, up, lo} : TJunction{X, Y, up, lo});
    }
  };
  const int n = int(rects.size());
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      if (a == b || !overlaps(rects[std::size_t(a)], rects[std::size_t(b)])) continue;
      const Rect& U = rects[std::size_t(a)];
      const Rect& L = rects[std::size_t(b)];
      // L vertical edges against U horizontal edges.
      for (int vx : {L.x0, L.x1 + 1})
        for (int hy : {U.y0, U.y1 + 1})
          if (U.x0 < vx && vx < U.x1 + 1 && L.y0 < hy && hy < L.y1 + 1)
            probe(a, b, vx, vx == L.x0, hy, hy == U.y0, false);
      // L horizontal edges against U vertical edges (same test with axes swapped).
      for (int hy : {L.y0, L.y1 + 1})
        for (int vx : {U.x0, U.x1 + 1})
          if (U.y0 < hy && hy < U.y1 + 1 && L.x0 < vx && vx < L.x1 + 1)
            probe(a, b, hy, hy == L.y0, vx, vx == U.x0, true);
    }
  return out;
}

inline std::vector<TJunction> find_tjunctions(const Scene& s) { return find_tjunctions(s.rects, s.top, s.width, s.height); }

/// Reflexive-free transitive closure of the "upper over lower" relation.
inline std::vector<std::vector<bool>> ordering_closure(std::size_t n, const std::vector<TJunction>& junctions) {
  std::vector<std::vector<bool>> above(n, std::vector<bool>(n, false));
  for (const auto& j : junctions) above[std::size_t(j.upper)][std::size_t(j.lower)] = true;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (above[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (above[k][j]) above[i][j] = true;
  return above;
}

struct VerifyResult {
  bool ok = true;
  std::string reason;  // empty when ok
  explicit operator bool() const { return ok; }
};

inline VerifyResult verify_unambiguous(const Scene& s, double min_visible_frac = 0.05) {
  const std::size_t n = s.rects.size();
  auto fail = [](std::string why) { return VerifyResult{false, std::move(why)}; };
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (aligned(s.rects[a], s.rects[b])) {
        return fail("aligned sides (rects " + std::to_string(a) + ", " + std::to_string(b) + ")");
      }

  // Visible pixel count and bounding box per rect.
  std::vector<long> visible(n, 0);
  std::vector<Rect> bbox(n, Rect{s.width, s.height, -1, -1});
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const int t = s.top[std::size_t(y) * std::size_t(s.width) + std::size_t(x)];
      if (t < 0) continue;
      Rect& bb = bbox[std::size_t(t)];
      ++visible[std::size_t(t)];
      bb.x0 = std::min(bb.x0, x), bb.y0 = std::min(bb.y0, y);
      bb.x1 = std::max(bb.x1, x), bb.y1 = std::max(bb.y1, y);
    }
  for (std::size_t r = 0; r < n; ++r) {
    const Rect& q = s.rects[r];
    if (visible[r] == 0) return fail("hidden rectangle (rect " + std::to_string(r) + ")");
    if (double(visible[r]) < min_visible_frac * double(q.area())) {
      return fail("insufficient visibility (rect " + std::to_string(r) + ")");
    }
    const Rect& bb = bbox[r];
    if (bb.x0 != q.x0 || bb.y0 != q.y0 || bb.x1 != q.x1 || bb.y1 != q.y1) {
      return fail("hidden side (rect " + std::to_string(r) + ")");
    }
  }

  const auto junctions = find_tjunctions(s);
  const auto above = ordering_closure(n, junctions);
  for (std::size_t a = 0; a < n; ++a) {
    if (above[a][a]) return fail("cyclic ordering (rect " + std::to_string(a) + ")");
    for (std::size_t b = a + 1; b < n; ++b) {
      if (!overlaps(s.rects[a], s.rects[b])) continue;
      if (!above[a][b] && !above[b][a]) {
        return fail("unordered pair (rects " + std::to_string(a) + ", " + std::to_string(b) + ")");
      }
    }
  }
  return {};
}

struct RdeGeneration {
  Scene scene;
  int attempts = 0;         // scenes started, including the accepted one
  long rect_rejections = 0; // single-rect resamples inside those scenes
};

namespace detail {

/// Incremental painter state: visible pixel count and visible pixels on each
/// side line per rect, updated as rects are stacked.
struct StackState {
  int width, height;
  std::vector<int> top;
  std::vector<Rect> rects;
  std::vector<long> visible;
  std::vector<std::array<long, 4>> side;  // left, right, top, bottom

  StackState(int w, int h) : width(w), height(h), top(std::size_t(w) * std::size_t(h), -1) {}

  /// Places `r` on top; returns false (leaving the state unchanged) if any rect
  /// would drop below `min_frac` visibility or lose a whole side.
  bool push(const Rect& r, double min_frac) {
    std::vector<long> vis_loss(rects.size(), 0);
    std::vector<std::array<long, 4>> side_loss(rects.size(), {0, 0, 0, 0});
    for (int y = r.y0; y <= r.y1; ++y)
      for (int x = r.x0; x <= r.x1; ++x) {
        const int t = top[std::size_t(y) * std::size_t(width) + std::size_t(x)];
        if (t < 0) continue;
        const Rect& q = rects[std::size_t(t)];
        ++vis_loss[std::size_t(t)];
        auto& sl = side_loss[std::size_t(t)];
        sl[0] += x == q.x0, sl[1] += x == q.x1, sl[2] += y == q.y0, sl[3] += y == q.y1;
      }
    for (std::size_t t = 0; t < rects.size(); ++t) {
      if (vis_loss[t] == 0) continue;
      const long v = visible[t] - vis_loss[t];
      if (v <= 0 || double(v) < min_frac * double(rects[t].area())) return false;
      for (int k = 0; k < 4; ++k)
        if (side[t][std::size_t(k)] - side_loss[t][std::size_t(k)] <= 0) return false;
    }
    for (std::size_t t = 0; t < rects.size(); ++t) {
      visible[t] -= vis_loss[t];
      for (int k = 0; k < 4; ++k) side[t][std::size_t(k)] -= side_loss[t][std::size_t(k)];
    }
    const int id = int(rects.size());
    for (int y = r.y0; y <= r.y1; ++y)
      for (int x = r.x0; x <= r.x1; ++x) top[std::size_t(y) * std::size_t(width) + std::size_t(x)] = id;
    rects.push_back(r);
    visible.push_back(r.area());
    side.push_back({r.y1 - r.y0 + 1, r.y1 - r.y0 + 1, r.x1 - r.x0 + 1, r.x1 - r.x0 + 1});
    return true;
  }
};

inline Rect sample_rect(const RdeConfig& cfg, std::mt19937_64& rng, int z, int color) {
  std::uniform_int_distribution<int> wside(cfg.min_side, std::min(cfg.max_side, cfg.width));
  std::uniform_int_distribution<int> hside(cfg.min_side, std::min(cfg.max_side, cfg.height));
  const int w = wside(rng), h = hside(rng);
  const int x0 = std::uniform_int_distribution<int>(0, cfg.width - w)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, cfg.height - h)(rng);
  return Rect{x0, y0, x0 + w - 1, y0 + h - 1, z, color};
}

}  // namespace detail

/// Samples a scene that passes verify_unambiguous. Rects are stacked bottom to
/// top; a candidate that is aligned with an earlier rect, or that hides too much
/// of one (conditions that more rects on top can never repair), is resampled up
/// to `kRectTries` times before the scene restarts. The complete scene is then
/// checked by the verifier and restarted on failure. With cfg.filter off, rects
/// are drawn once with no checks.
inline RdeGeneration generate_rde_scene(std::uint64_t seed, const RdeConfig& cfg) {
  constexpr int kRectTries = 200;
  cfg.validate();
  std::mt19937_64 rng(seed);
  RdeGeneration gen;
  for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
    gen.attempts = attempt;
    std::vector<int> colors(cfg.palette.size());
    std::iota(colors.begin(), colors.end(), 0);
    std::shuffle(colors.begin(), colors.end(), rng);
    detail::StackState stack(cfg.width, cfg.height);
    bool complete = true;
    for (int i = 0; i < cfg.n_rects && complete; ++i) {
      bool placed = false;
      for (int tries = 0; tries < kRectTries && !placed; ++tries) {
        const Rect r = detail::sample_rect(cfg, rng, i, colors[std::size_t(i)]);
        if (!cfg.filter) {
          stack.rects.push_back(r);
          placed = true;
          break;
        }
        placed = std::none_of(stack.rects.begin(), stack.rects.end(), [&](const Rect& o) { return aligned(o, r); }) &&
                 stack.push(r, cfg.min_visible_frac);
        if (!placed) ++gen.rect_rejections;
      }
      complete = placed;
    }
    if (!complete) continue;
    Scene s = render_scene(std::move(stack.rects), cfg.width, cfg.height, cfg.palette, cfg.background);
    s.seed = seed;
    if (!cfg.filter || verify_unambiguous(s, cfg.min_visible_frac)) {
      gen.scene = std::move(s);
      return gen;
    }
  }
  throw GenerationError("rde: no unambiguous scene within " + std::to_string(cfg.max_retries) + " attempts (W=" +
                        std::to_string(cfg.width) + ", H=" + std::to_string(cfg.height) + ", n_rects=" +
                        std::to_string(cfg.n_rects) + ", sides " + std::to_string(cfg.min_side) + ".." +
                        std::to_string(cfg.max_side) + ", seed=" + std::to_string(seed) + ")");
}

/// Label reconstruction from the rendered image alone.
struct RdeSolution {
  bool ok = false;
  std::string reason;
  std::vector<Rect> rects;           // recovered extents; z from the junction ordering
  std::vector<std::uint16_t> label;  // 1 + coverage count
};

inline RdeSolution solve_rde(const std::vector<std::uint8_t>& image, int width, int height,
                             const std::vector<Rgb>& palette, const Rgb& background) {
  RdeSolution sol;
  const std::size_t npix = std::size_t(width) * std::size_t(height);
  if (image.size() != npix * 3) throw DimensionError("solve_rde: image buffer does not match " +
                                                     std::to_string(width) + "x" + std::to_string(height));
  // Segment by exact palette color; each visible color is one rect.
  std::vector<int> color_of(npix, -1);
  for (std::size_t i = 0; i < npix; ++i) {
    const Rgb c{image[3 * i], image[3 * i + 1], image[3 * i + 2]};
    if (c == background) continue;
    auto it = std::find(palette.begin(), palette.end(), c);
    if (it == palette.end()) {
      sol.reason = "pixel color outside palette";
      return sol;
    }
    color_of[i] = int(it - palette.begin());
  }
  std::vector<int> rect_of_color(palette.size(), -1);
  for (std::size_t i = 0; i < npix; ++i) {
    const int c = color_of[i];
    if (c < 0) continue;
    const int x = int(i % std::size_t(width)), y = int(i / std::size_t(width));
    int& r = rect_of_color[std::size_t(c)];
    if (r < 0) {
      r = int(sol.rects.size());
      sol.rects.push_back(Rect{x, y, x, y, 0, c});
    }
    Rect& q = sol.rects[std::size_t(r)];
    q.x0 = std::min(q.x0, x), q.y0 = std::min(q.y0, y);
    q.x1 = std::max(q.x1, x), q.y1 = std::max(q.y1, y);
  }
  std::vector<int> top(npix, -1);
  for (std::size_t i = 0; i < npix; ++i)
    if (color_of[i] >= 0) top[i] = rect_of_color[std::size_t(color_of[i])];

  // Depth order: topological sort of the junction digraph, lowest first.
  const std::size_t n = sol.rects.size();
  const auto junctions = find_tjunctions(sol.rects, top, width, height);
  const auto above = ordering_closure(n, junctions);
  for (std::size_t a = 0; a < n; ++a)
    if (above[a][a]) {
      sol.reason = "cyclic junction ordering";
      return sol;
    }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Number of rects below each one is a valid rank for a strict partial order closure.
  std::vector<std::size_t> below(n, 0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) below[a] += above[a][b];
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return below[a] < below[b]; });
  for (std::size_t rank = 0; rank < n; ++rank) sol.rects[order[rank]].z = int(rank);

  // Re-rendering with the inferred order must reproduce the image.
  const Scene redo = render_scene(sol.rects, width, height, palette, background);
  if (redo.image != image) {
    sol.reason = "inferred ordering does not reproduce the image";
    return sol;
  }
  sol.rects = redo.rects;
  sol.label = redo.label;
  sol.ok = true;
  return sol;
}

// ---------------------------------------------------------------------------
// Centered Square

struct SquareSample {
  std::size_t row = 0;
  std::size_t col = 0;
};

struct SquareConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t side = 21;

  void validate() const {
    if (side % 2 == 0) throw ConfigError("centered square: side must be odd, got " + std::to_string(side));
    if (side >= std::min(height, width)) throw ConfigError("centered square: side must be smaller than the image");
  }
};

struct SquareSplit {
  std::vector<SquareSample> train;
  std::vector<SquareSample> test;
};

/// Valid centers form a (H-w+1) x (W-w+1) grid; the centered sub-grid of half
/// its extent is the train split, the rest is test. Row-major order.
inline SquareSplit generate_centered_square(const SquareConfig& cfg) {
  cfg.validate();
  const std::size_t r = cfg.side / 2;
  const std::size_t vr = cfg.height - cfg.side + 1, vc = cfg.width - cfg.side + 1;
  const std::size_t tr = vr / 2, tc = vc / 2;
  const std::size_t r_off = (vr - tr) / 2, c_off = (vc - tc) / 2;
  SquareSplit out;
  for (std::size_t i = 0; i < vr; ++i)
    for (std::size_t j = 0; j < vc; ++j) {
      const bool train = i >= r_off && i < r_off + tr && j >= c_off && j < c_off + tc;
      (train ? out.train : out.test).push_back({i + r, j + r});
    }
  return out;
}

/// Input: one white pixel at the center. Target: the side x side square around it.
inline Tensor square_input(const SquareConfig& cfg, const SquareSample& s) {
  Tensor t({1, cfg.height * cfg.width});
  t[s.row * cfg.width + s.col] = 1.f;
  return t;
}

inline Tensor square_target(const SquareConfig& cfg, const SquareSample& s) {
  Tensor t({1, cfg.height * cfg.width});
  const std::size_t r = cfg.side / 2;
  for (std::size_t i = s.row - r; i <= s.row + r; ++i)
    for (std::size_t j = s.col - r; j <= s.col + r; ++j) t[i * cfg.width + j] = 1.f;
  return t;
}

// ---------------------------------------------------------------------------
// Color Code

struct ColorCodeConfig {
  std::size_t n = 128;
  std::size_t k = 10;
  std::size_t z = 32;
  double mask_frac = 0.5;
  int min_color_dist = 0;  // L-infinity, 0 disables
  int max_retries = 10000;
  bool repair = true;  // disabling breaks well-posedness; test-only

  [[nodiscard]] std::size_t masked_count() const { return std::size_t(std::floor(double(n) * mask_frac)); }

  void validate() const {
    if (n == 0 || k == 0 || z == 0) throw ConfigError("color code: n, k and z must be positive");
    if (k > z) throw ConfigError("color code: k exceeds the code alphabet size");
    if (k > n / 2) throw ConfigError("color code: k must be at most n/2");
    if (mask_frac < 0 || mask_frac > 1) throw ConfigError("color code: mask_frac must lie in [0, 1]");
    if (n - masked_count() < k) throw ConfigError("color code: too few unmasked positions to reveal every color");
    if (min_color_dist < 0 || min_color_dist > 255) throw ConfigError("color code: min_color_dist out of range");
    if (max_retries <= 0) throw ConfigError("color code: max_retries must be positive");
  }
};

struct ColorCodeSample {
  std::vector<Rgb> colors;               // k
  std::vector<std::uint16_t> sigma;      // N, position -> color index
  std::vector<std::uint16_t> codes;      // k, code of each color
  std::vector<std::uint8_t> given;       // N, 1 where the code is shown (m = true)
  std::size_t z = 0;

  [[nodiscard]] std::size_t positions() const { return sigma.size(); }

  /// (3 + Z) x N: normalized colors, then the one-hot code times the mask.
  [[nodiscard]] Tensor input() const {
    const std::size_t n = positions();
    Tensor x({3 + z, n});
    for (std::size_t p = 0; p < n; ++p) {
      const Rgb& c = colors[sigma[p]];
      for (std::size_t ch = 0; ch < 3; ++ch) x(ch, p) = float(c[ch]) / 255.f;
      if (given[p]) x(3 + codes[sigma[p]], p) = 1.f;
    }
    return x;
  }

  [[nodiscard]] std::vector<std::uint16_t> target() const {
    std::vector<std::uint16_t> y(positions());
    for (std::size_t p = 0; p < y.size(); ++p) y[p] = codes[sigma[p]];
    return y;
  }

  /// Every color keeps at least one position with its code shown.
  [[nodiscard]] bool well_posed() const {
    std::vector<bool> shown(colors.size(), false);
    for (std::size_t p = 0; p < positions(); ++p)
      if (given[p]) shown[sigma[p]] = true;
    return std::all_of(shown.begin(), shown.end(), [](bool b) { return b; });
  }
};

inline ColorCodeSample generate_colorcode(std::uint64_t seed, const ColorCodeConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  int budget = cfg.max_retries;
  auto spend = [&](const char* what) {
    if (--budget < 0) {
      throw GenerationError(std::string("color code: retry budget exhausted while sampling ") + what + " (n=" +
                            std::to_string(cfg.n) + ", k=" + std::to_string(cfg.k) + ", seed=" + std::to_string(seed) + ")");
    }
  };
  ColorCodeSample s;
  s.z = cfg.z;
  std::uniform_int_distribution<int> channel(0, 255);
  while (s.colors.size() < cfg.k) {
    const Rgb c{std::uint8_t(channel(rng)), std::uint8_t(channel(rng)), std::uint8_t(channel(rng))};
    const bool far = std::all_of(s.colors.begin(), s.colors.end(), [&](const Rgb& o) {
      int d = 0;
      for (int i = 0; i < 3; ++i) d = std::max(d, std::abs(int(c[std::size_t(i)]) - int(o[std::size_t(i)])));
      return cfg.min_color_dist > 0 ? d >= cfg.min_color_dist : c != o;
    });
    if (far) {
      s.colors.push_back(c);
    } else {
      spend("colors");
    }
  }

  std::vector<std::uint16_t> alphabet(cfg.z);
  std::iota(alphabet.begin(), alphabet.end(), std::uint16_t{0});
  std::shuffle(alphabet.begin(), alphabet.end(), rng);
  s.codes.assign(alphabet.begin(), alphabet.begin() + std::ptrdiff_t(cfg.k));

  std::uniform_int_distribution<std::size_t> pick(0, cfg.k - 1);
  s.sigma.resize(cfg.n);
  for (;;) {
    std::vector<bool> seen(cfg.k, false);
    for (auto& v : s.sigma) seen[v = std::uint16_t(pick(rng))] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) break;
    spend("a surjective assignment");
  }

  std::vector<std::size_t> order(cfg.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  s.given.assign(cfg.n, 1);
  for (std::size_t i = 0; i < cfg.masked_count(); ++i) s.given[order[i]] = 0;

  if (cfg.repair) {
    // Swap a hidden position of each unrevealed color with a shown position of
    // a color revealed at least twice; the masked count stays fixed.
    std::vector<std::size_t> shown(cfg.k, 0);
    for (std::size_t p = 0; p < cfg.n; ++p) shown[s.sigma[p]] += s.given[p];
    for (std::size_t c = 0; c < cfg.k; ++c) {
      if (shown[c] > 0) continue;
      std::vector<std::size_t> hidden_here, donors;
      for (std::size_t p = 0; p < cfg.n; ++p) {
        if (s.sigma[p] == c && !s.given[p]) hidden_here.push_back(p);
        if (s.given[p] && shown[s.sigma[p]] >= 2) donors.push_back(p);
      }
      const std::size_t reveal = hidden_here[std::uniform_int_distribution<std::size_t>(0, hidden_here.size() - 1)(rng)];
      const std::size_t hide = donors[std::uniform_int_distribution<std::size_t>(0, donors.size() - 1)(rng)];
      s.given[reveal] = 1;
      s.given[hide] = 0;
      ++shown[c];
      --shown[s.sigma[hide]];
    }
  }
  return s;
}

}  // namespace synthprobe
