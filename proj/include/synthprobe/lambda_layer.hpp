#pragma once

// Global Lambda layer with pluggable positional paths.
//
// Shapes (per sample): x is C_in x N, K and Q are M x C_in, V is C_out x C_in,
// A is C_out x M, P is C x N.
//
//   Kbar      = softmax over positions of K x        (M x N)
//   l_content = Kbar (V x)^T                          (M x C_out)
//   y_content = l_content^T Q x                       (C_out x N)
//   l_pos     = A Kbar P^T                            (C_out x C)     decorrelated only
//   y_pos     = l_pos P                               (C_out x N)     decorrelated only
//
// Sum variants add (a projection of) P to x before the projections instead
// of using a positional path; coordconv appends coordinate channels.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "synthprobe/autodiff.hpp"
#include "synthprobe/errors.hpp"
#include "synthprobe/tensor.hpp"

namespace synthprobe {

enum class Encoding { none, cosine_sum_qkv, cosine_sum_qv, cosine_decor, fourier_decor, coordconv };

inline constexpr std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::none: return "none";
    case Encoding::cosine_sum_qkv: return "cosine_sum_qkv";
    case Encoding::cosine_sum_qv: return "cosine_sum_qv";
    case Encoding::cosine_decor: return "cosine_decor";
    case Encoding::fourier_decor: return "fourier_decor";
    case Encoding::coordconv: return "coordconv";
  }
  return "?";
}

inline Encoding parse_encoding(std::string_view name) {
  for (Encoding e : {Encoding::none, Encoding::cosine_sum_qkv, Encoding::cosine_sum_qv, Encoding::cosine_decor,
                     Encoding::fourier_decor, Encoding::coordconv}) {
    if (to_string(e) == name) return e;
  }
  throw ConfigError("unknown encoding '" + std::string(name) + "'");
}

inline constexpr bool is_decor(Encoding e) { return e == Encoding::cosine_decor || e == Encoding::fourier_decor; }
inline constexpr bool is_sum(Encoding e) { return e == Encoding::cosine_sum_qkv || e == Encoding::cosine_sum_qv; }
inline constexpr bool uses_sinusoids(Encoding e) { return is_decor(e) || is_sum(e); }

/// Position layout: a sequence of N, or an H x W grid flattened row-major.
struct Geometry {
  enum class Kind { seq, grid };
  Kind kind = Kind::seq;
  std::size_t height = 1;
  std::size_t width = 1;

  static Geometry seq(std::size_t n) { return {Kind::seq, 1, n}; }
  static Geometry grid(std::size_t h, std::size_t w) { return {Kind::grid, h, w}; }

  [[nodiscard]] std::size_t positions() const { return height * width; }
  [[nodiscard]] bool is_grid() const { return kind == Kind::grid; }
  [[nodiscard]] std::size_t coord_channels() const { return is_grid() ? 2 : 1; }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

struct LambdaConfig {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t m = 0;     // context size
  std::size_t c_pe = 0;  // positional channels (total; split per axis on grids)
  Encoding encoding = Encoding::none;
  bool tt = false;
  Geometry geometry;

  /// Channel count seen by the K/Q/V projections.
  [[nodiscard]] std::size_t projected_channels() const {
    return encoding == Encoding::coordconv ? c_in + geometry.coord_channels() : c_in;
  }

  void validate() const {
    if (c_in == 0 || c_out == 0 || m == 0) throw ConfigError("lambda: c_in, c_out and m must be positive");
    if (geometry.positions() == 0) throw ConfigError("lambda: geometry has no positions");
    if (uses_sinusoids(encoding)) {
      if (c_pe == 0 || c_pe % 2 != 0) {
        throw ConfigError("lambda: positional channels must be even and positive, got " + std::to_string(c_pe));
      }
      if (geometry.is_grid() && c_pe % 4 != 0) {
        throw ConfigError("lambda: grid positional channels must be divisible by 4, got " + std::to_string(c_pe));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Positional encodings

enum class FrequencySchedule { cosine, fourier };

/// Frequencies for one axis carrying `channels` (even) sinusoid rows.
/// cosine: 10000^(-2k/C), k = 0..C/2-1. fourier: 2*pi*c/(2C), c = 1..C/2.
inline std::vector<double> axis_frequencies(FrequencySchedule schedule, std::size_t channels) {
  if (channels == 0 || channels % 2 != 0) {
    throw ConfigError("positional channels per axis must be even and positive, got " + std::to_string(channels));
  }
  std::vector<double> w;
  const std::size_t pairs = channels / 2;
  for (std::size_t k = 0; k < pairs; ++k) {
    if (schedule == FrequencySchedule::fourier) {
      w.push_back(2.0 * std::numbers::pi * static_cast<double>(k + 1) / (2.0 * static_cast<double>(channels)));
    } else {
      w.push_back(std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(channels)));
    }
  }
  return w;
}

template <typename T>
struct PositionalEncoding {
  BasicTensor<T> p;                 // C x N
  std::vector<double> frequencies;  // per-axis schedule (shared by both axes on grids)
  Encoding method = Encoding::none;
};

/// Builds P for a sinusoidal method. Row 2k holds cos(w_k n), row 2k+1 sin(w_k n).
/// On grids the first C/2 rows encode the row index and the last C/2 the column index.
template <typename T = float>
PositionalEncoding<T> build_encoding(Encoding method, std::size_t c_pe, const Geometry& geometry) {
  if (!uses_sinusoids(method)) throw ConfigError("build_encoding: " + std::string(to_string(method)) + " has no P matrix");
  if (c_pe == 0 || c_pe % 2 != 0) throw ConfigError("build_encoding: odd or zero channel count " + std::to_string(c_pe));
  if (geometry.is_grid() && c_pe % 4 != 0) {
    throw ConfigError("build_encoding: grid encodings need channels divisible by 4, got " + std::to_string(c_pe));
  }
  const auto schedule = method == Encoding::fourier_decor ? FrequencySchedule::fourier : FrequencySchedule::cosine;
  const std::size_t per_axis = geometry.is_grid() ? c_pe / 2 : c_pe;
  PositionalEncoding<T> pe{BasicTensor<T>({c_pe, geometry.positions()}), axis_frequencies(schedule, per_axis), method};

  auto fill_axis = [&](std::size_t row0, auto coordinate) {
    for (std::size_t k = 0; k < pe.frequencies.size(); ++k) {
      for (std::size_t n = 0; n < geometry.positions(); ++n) {
        const double arg = pe.frequencies[k] * static_cast<double>(coordinate(n));
        pe.p(row0 + 2 * k, n) = static_cast<T>(std::cos(arg));
        pe.p(row0 + 2 * k + 1, n) = static_cast<T>(std::sin(arg));
      }
    }
  };
  if (geometry.is_grid()) {
    fill_axis(0, [&](std::size_t n) { return n / geometry.width; });
    fill_axis(per_axis, [&](std::size_t n) { return n % geometry.width; });
  } else {
    fill_axis(0, [](std::size_t n) { return n; });
  }
  return pe;
}

/// Coordinate channels in [-1, 1] (row, col on grids; position on sequences).
template <typename T = float>
BasicTensor<T> coordinate_channels(const Geometry& geometry) {
  auto norm = [](std::size_t i, std::size_t extent) {
    return extent > 1 ? static_cast<T>(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1)) : T{0};
  };
  BasicTensor<T> out({geometry.coord_channels(), geometry.positions()});
  for (std::size_t n = 0; n < geometry.positions(); ++n) {
    if (geometry.is_grid()) {
      out(0, n) = norm(n / geometry.width, geometry.height);
      out(1, n) = norm(n % geometry.width, geometry.width);
    } else {
      out(0, n) = norm(n, geometry.width);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weights

template <typename T>
struct LambdaWeights {
  BasicTensor<T> k;        // M x C_k
  BasicTensor<T> v;        // C_out x C_k
  BasicTensor<T> q;        // M x C_k
  BasicTensor<T> a;        // C_out x M (decorrelated only)
  BasicTensor<T> k2;       // M x C_k (tt only)
  BasicTensor<T> v2;       // C_k x C_k (tt only)
  BasicTensor<T> pe_proj;  // C_in x C (sum variants with C != C_in)

  /// Named parameters present for this configuration, in a fixed order.
  std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
    std::vector<std::pair<std::string, BasicTensor<T>*>> out;
    for (auto [name, t] : {std::pair{"K", &k}, {"V", &v}, {"Q", &q}, {"A", &a}, {"K2", &k2}, {"V2", &v2},
                           {"P_proj", &pe_proj}}) {
      if (!t->empty()) out.emplace_back(name, t);
    }
    return out;
  }
};

/// Expected parameter shapes for a configuration (empty shape = absent).
inline std::vector<std::pair<std::string, Shape>> lambda_param_shapes(const LambdaConfig& cfg) {
  const std::size_t ck = cfg.projected_channels();
  std::vector<std::pair<std::string, Shape>> out = {
      {"K", {cfg.m, ck}}, {"V", {cfg.c_out, ck}}, {"Q", {cfg.m, ck}}};
  if (is_decor(cfg.encoding)) out.push_back({"A", {cfg.c_out, cfg.m}});
  if (cfg.tt) {
    out.push_back({"K2", {cfg.m, ck}});
    out.push_back({"V2", {ck, ck}});
  }
  if (is_sum(cfg.encoding) && cfg.c_pe != cfg.c_in) out.push_back({"P_proj", {cfg.c_in, cfg.c_pe}});
  return out;
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per matrix, fan_in = columns.
template <typename T = float>
LambdaWeights<T> init_lambda_weights(const LambdaConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  LambdaWeights<T> w;
  auto draw = [&](const Shape& shape) {
    BasicTensor<T> t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape[1]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : t.data()) x = static_cast<T>(dist(rng));
    return t;
  };
  for (const auto& [name, shape] : lambda_param_shapes(cfg)) {
    if (name == "K") w.k = draw(shape);
    else if (name == "V") w.v = draw(shape);
    else if (name == "Q") w.q = draw(shape);
    else if (name == "A") w.a = draw(shape);
    else if (name == "K2") w.k2 = draw(shape);
    else if (name == "V2") w.v2 = draw(shape);
    else if (name == "P_proj") w.pe_proj = draw(shape);
  }
  return w;
}

template <typename T>
void check_lambda_weights(LambdaWeights<T>& w, const LambdaConfig& cfg) {
  auto expected = lambda_param_shapes(cfg);
  auto present = w.named();
  if (present.size() != expected.size()) {
    throw DimensionError("lambda weights: expected " + std::to_string(expected.size()) + " parameters, got " +
                         std::to_string(present.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (present[i].first != expected[i].first || present[i].second->shape() != expected[i].second) {
      throw DimensionError("lambda weights: parameter " + expected[i].first + " should be " +
                           shape_str(expected[i].second) + ", got " + present[i].first + " " +
                           shape_str(present[i].second->shape()));
    }
  }
}

/// Tape handles for one layer's parameters.
template <typename T>
struct LambdaParams {
  BasicVar<T> k, v, q, a, k2, v2, pe_proj;
};

template <typename T>
LambdaParams<T> bind_lambda(BasicTape<T>& tape, const LambdaWeights<T>& w, bool requires_grad) {
  auto bind = [&](const BasicTensor<T>& t) { return t.empty() ? BasicVar<T>{} : tape.leaf(t, requires_grad); };
  return {bind(w.k), bind(w.v), bind(w.q), bind(w.a), bind(w.k2), bind(w.v2), bind(w.pe_proj)};
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

template <typename F>
auto lambda_stage(const char* stage, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("lambda layer, stage '") + stage + "': " + e.what());
  }
}

}  // namespace detail

/// Per-layer constants shared by every forward call of one configuration.
template <typename T>
struct LambdaContext {
  LambdaConfig cfg;
  std::optional<PositionalEncoding<T>> pe;
  BasicTensor<T> coords;

  explicit LambdaContext(LambdaConfig c) : cfg(c) {
    cfg.validate();
    if (uses_sinusoids(cfg.encoding)) pe = build_encoding<T>(cfg.encoding, cfg.c_pe, cfg.geometry);
    if (cfg.encoding == Encoding::coordconv) coords = coordinate_channels<T>(cfg.geometry);
  }
};

namespace detail {

template <typename T>
struct ProjectionInputs {
  BasicVar<T> key, query, value;
  BasicVar<T> p;  // P as a constant (decorrelated path)
};

template <typename T>
ProjectionInputs<T> projection_inputs(const BasicVar<T>& x, const LambdaParams<T>& w, const LambdaContext<T>& ctx) {
  const LambdaConfig& cfg = ctx.cfg;
  BasicTape<T>& tape = *x.tape();
  if (x.shape() != Shape{cfg.c_in, cfg.geometry.positions()}) {
    throw DimensionError("lambda: input " + shape_str(x.shape()) + " does not match config [" +
                         std::to_string(cfg.c_in) + "x" + std::to_string(cfg.geometry.positions()) + "]");
  }
  ProjectionInputs<T> in{x, x, x, {}};
  switch (cfg.encoding) {
    case Encoding::none: break;
    case Encoding::coordconv: {
      BasicVar<T> xc = concat_rows(x, tape.constant(ctx.coords));
      in = {xc, xc, xc, {}};
      break;
    }
    case Encoding::cosine_sum_qkv:
    case Encoding::cosine_sum_qv: {
      BasicVar<T> p = tape.constant(ctx.pe->p);
      BasicVar<T> shifted = lambda_stage("x + P", [&] { return add(x, w.pe_proj.valid() ? matmul(w.pe_proj, p) : p); });
      in = {cfg.encoding == Encoding::cosine_sum_qkv ? shifted : x, shifted, shifted, {}};
      break;
    }
    case Encoding::cosine_decor:
    case Encoding::fourier_decor: in.p = tape.constant(ctx.pe->p); break;
  }
  return in;
}

template <typename T>
BasicVar<T> lambda_core(const ProjectionInputs<T>& in, const BasicVar<T>& key_matrix, const LambdaParams<T>& w,
                        const LambdaConfig& cfg) {
  BasicVar<T> kbar = lambda_stage("Kbar = softmax_N(Kx)", [&] { return softmax_axis(matmul(key_matrix, in.key), 1); });
  BasicVar<T> l_content = lambda_stage("lambda_content = Kbar (Vx)^T", [&] { return matmul_nt(kbar, matmul(w.v, in.value)); });
  BasicVar<T> y = lambda_stage("y_content = lambda_content^T Qx", [&] { return matmul_tn(l_content, matmul(w.q, in.query)); });
  if (!is_decor(cfg.encoding)) return y;
  BasicVar<T> l_pos = lambda_stage("lambda_pos = A Kbar P^T", [&] { return matmul(w.a, matmul_nt(kbar, in.p)); });
  BasicVar<T> y_pos = lambda_stage("y_pos = lambda_pos P", [&] { return matmul(l_pos, in.p); });
  return lambda_stage("y = y_content + y_pos", [&] { return add(y, y_pos); });
}

}  // namespace detail

/// Input-dependent part of the twice-iterated variant's key matrix:
/// the lambda of a first pass, softmax_N(K2 x) (V2 x)^T (M x C_k).
/// The second pass uses Khat = K + this.
template <typename T>
BasicVar<T> lambda_tt_keys(const BasicVar<T>& key_input, const LambdaParams<T>& w) {
  if (!w.k2.valid() || !w.v2.valid()) throw ConfigError("lambda_tt: K2/V2 weights are missing");
  BasicVar<T> kbar2 = detail::lambda_stage("Kbar2 = softmax_N(K2 x)", [&] { return softmax_axis(matmul(w.k2, key_input), 1); });
  return detail::lambda_stage("Kbar2 (V2 x)^T", [&] { return matmul_nt(kbar2, matmul(w.v2, key_input)); });
}

/// Tracked forward on the tape owning `x`. Dispatches to the two-pass keys when cfg.tt.
template <typename T>
BasicVar<T> lambda_forward(const BasicVar<T>& x, const LambdaParams<T>& w, const LambdaContext<T>& ctx) {
  auto in = detail::projection_inputs(x, w, ctx);
  if (!ctx.cfg.tt) return detail::lambda_core(in, w.k, w, ctx.cfg);
  const BasicVar<T> khat = detail::lambda_stage("Khat = K + Kbar2 (V2 x)^T", [&] { return add(w.k, lambda_tt_keys(in.key, w)); });
  return detail::lambda_core(in, khat, w, ctx.cfg);
}

/// Two-pass variant; requires cfg.tt.
template <typename T>
BasicVar<T> lambda_tt_forward(const BasicVar<T>& x, const LambdaParams<T>& w, const LambdaContext<T>& ctx) {
  if (!ctx.cfg.tt) throw ConfigError("lambda_tt_forward: config does not enable tt");
  return lambda_forward(x, w, ctx);
}

/// Untracked convenience forward on plain tensors.
template <typename T>
BasicTensor<T> lambda_forward(const BasicTensor<T>& x, const LambdaWeights<T>& w, const LambdaContext<T>& ctx) {
  BasicTape<T> tape;
  auto params = bind_lambda(tape, w, false);
  return lambda_forward(tape.constant(x), params, ctx).value();
}

// ---------------------------------------------------------------------------
// Equivariance probes (circular boundary semantics)

/// out[:, (i + dy, j + dx) mod (H, W)] = x[:, (i, j)]. Sequences use dx only.
template <typename T>
BasicTensor<T> shift_positions(const BasicTensor<T>& x, const Geometry& g, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  if (x.rank() != 2 || x.cols() != g.positions()) {
    throw DimensionError("shift_positions: " + shape_str(x.shape()) + " vs " + std::to_string(g.positions()) + " positions");
  }
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  auto wrap = [](std::ptrdiff_t v, std::ptrdiff_t n) { return ((v % n) + n) % n; };
  BasicTensor<T> out(x.shape());
  for (std::ptrdiff_t i = 0; i < h; ++i) {
    for (std::ptrdiff_t j = 0; j < w; ++j) {
      const auto src = static_cast<std::size_t>(i * w + j);
      const auto dst = static_cast<std::size_t>(wrap(i + dy, h) * w + wrap(j + dx, w));
      for (std::size_t c = 0; c < x.rows(); ++c) out(c, dst) = x(c, src);
    }
  }
  return out;
}

/// out[:, perm[n]] = x[:, n].
template <typename T>
BasicTensor<T> permute_positions(const BasicTensor<T>& x, std::span<const std::size_t> perm) {
  if (x.rank() != 2 || perm.size() != x.cols()) throw DimensionError("permute_positions: permutation length mismatch");
  BasicTensor<T> out(x.shape());
  for (std::size_t n = 0; n < perm.size(); ++n) {
    for (std::size_t c = 0; c < x.rows(); ++c) out(c, perm[n]) = x(c, n);
  }
  return out;
}

template <typename T>
using LayerFn = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

/// max |f(shift(x)) - shift(f(x))| for a circular shift.
template <typename T>
T shift_deviation(const LayerFn<T>& f, const BasicTensor<T>& x, const Geometry& g, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  return max_abs_diff(f(shift_positions(x, g, dy, dx)), shift_positions(f(x), g, dy, dx));
}

/// max |f(perm(x)) - perm(f(x))|.
template <typename T>
T permutation_deviation(const LayerFn<T>& f, const BasicTensor<T>& x, std::span<const std::size_t> perm) {
  return max_abs_diff(f(permute_positions(x, perm)), permute_positions(f(x), perm));
}

}  // namespace synthprobe
