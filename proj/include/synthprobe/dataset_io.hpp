#pragma once

// On-disk datasets: a directory holding `dataset.json` (generator + config),
// `manifest.jsonl` (one record per sample) and the sample payloads.

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "synthprobe/datasets.hpp"
#include "synthprobe/errors.hpp"
#include "synthprobe/image_io.hpp"
#include "synthprobe/tensor_io.hpp"

namespace synthprobe {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Threads

/// Worker count: SYNTHPROBE_THREADS if set (>= 1), else the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("SYNTHPROBE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return unsigned(v);
    throw ConfigError(std::string("SYNTHPROBE_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) over worker_count() threads. The first
/// exception thrown by any task is rethrown after all workers stop.
template <typename F>
void parallel_for(std::size_t count, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; !failed && (i = next++) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Hashing and config serialization

/// FNV-1a 64 of the compact JSON dump, as 16 hex digits.
inline std::string config_hash(const json& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : cfg.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string file_hash(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline json rgb_json(const Rgb& c) { return json::array({c[0], c[1], c[2]}); }
inline Rgb rgb_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("color must be an [r, g, b] array");
  Rgb c{};
  for (std::size_t i = 0; i < 3; ++i) {
    const int v = j[i].get<int>();
    if (v < 0 || v > 255) throw ConfigError("color channel out of range 0..255");
    c[i] = std::uint8_t(v);
  }
  return c;
}

inline json to_json(const RdeConfig& c) {
  json pal = json::array();
  for (const auto& p : c.palette) pal.push_back(rgb_json(p));
  return {{"width", c.width},         {"height", c.height},
          {"n_rects", c.n_rects},     {"palette", pal},
          {"background", rgb_json(c.background)},
          {"min_side", c.min_side},   {"max_side", c.max_side},
          {"min_visible_frac", c.min_visible_frac},
          {"max_retries", c.max_retries}, {"filter", c.filter}};
}

inline RdeConfig rde_config_from(const json& j) {
  RdeConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.n_rects = j.value("n_rects", c.n_rects);
  if (j.contains("palette")) {
    c.palette.clear();
    for (const auto& p : j.at("palette")) c.palette.push_back(rgb_from(p));
  }
  if (j.contains("background")) c.background = rgb_from(j.at("background"));
  c.min_side = j.value("min_side", c.min_side);
  c.max_side = j.value("max_side", c.max_side);
  c.min_visible_frac = j.value("min_visible_frac", c.min_visible_frac);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.filter = j.value("filter", c.filter);
  c.validate();
  return c;
}

inline json to_json(const SquareConfig& c) { return {{"height", c.height}, {"width", c.width}, {"side", c.side}}; }

inline SquareConfig square_config_from(const json& j) {
  SquareConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.side = j.value("side", c.side);
  c.validate();
  return c;
}

inline json to_json(const ColorCodeConfig& c) {
  return {{"n", c.n}, {"k", c.k}, {"z", c.z}, {"mask_frac", c.mask_frac}, {"min_color_dist", c.min_color_dist},
          {"max_retries", c.max_retries}, {"repair", c.repair}};
}

inline ColorCodeConfig colorcode_config_from(const json& j) {
  ColorCodeConfig c;
  c.n = j.value("n", c.n);
  c.k = j.value("k", c.k);
  c.z = j.value("z", c.z);
  c.mask_frac = j.value("mask_frac", c.mask_frac);
  c.min_color_dist = j.value("min_color_dist", c.min_color_dist);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.repair = j.value("repair", c.repair);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;
  std::string input;   // relative to the dataset directory
  std::string target;
  std::string generator;
  std::string cfg_hash;
};

inline json to_json(const ManifestRecord& r) {
  return {{"id", r.id},
          {"split", r.split},
          {"seed", r.seed},
          {"files", {{"input", r.input}, {"target", r.target}}},
          {"generator", r.generator},
          {"cfg_hash", r.cfg_hash}};
}

inline ManifestRecord manifest_record_from(const json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.input = j.at("files").at("input").get<std::string>();
  r.target = j.at("files").at("target").get<std::string>();
  r.generator = j.at("generator").get<std::string>();
  r.cfg_hash = j.at("cfg_hash").get<std::string>();
  return r;
}

/// A dataset directory: header plus records in index order.
struct DatasetManifest {
  fs::path dir;
  std::string generator;  // "rde", "centered_square", "color_code"
  json config;
  std::uint64_t seed = 0;
  std::vector<ManifestRecord> records;

  [[nodiscard]] fs::path manifest_path() const { return dir / "manifest.jsonl"; }
  [[nodiscard]] fs::path path_of(const std::string& rel) const { return dir / rel; }

  [[nodiscard]] std::vector<const ManifestRecord*> split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }

  [[nodiscard]] std::map<std::string, std::size_t> split_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& r : records) ++out[r.split];
    return out;
  }
};

inline void write_manifest(const DatasetManifest& m) {
  fs::create_directories(m.dir);
  {
    std::ofstream out(m.dir / "dataset.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (m.dir / "dataset.json").string());
    out << json{{"generator", m.generator}, {"config", m.config}, {"seed", m.seed}, {"count", m.records.size()}}.dump(2)
        << '\n';
  }
  std::ofstream out(m.manifest_path(), std::ios::trunc);
  if (!out) throw DataError("cannot write " + m.manifest_path().string());
  for (const auto& r : m.records) out << to_json(r).dump() << '\n';
}

/// Accepts either the dataset directory or its manifest.jsonl path.
inline DatasetManifest read_manifest(const fs::path& where) {
  DatasetManifest m;
  m.dir = fs::is_directory(where) ? where : where.parent_path();
  const fs::path header = m.dir / "dataset.json";
  std::ifstream hin(header);
  if (!hin) throw DataError("missing dataset header " + header.string());
  json h;
  try {
    h = json::parse(hin);
  } catch (const json::exception& e) {
    throw DataError(header.string() + ": " + e.what());
  }
  m.generator = h.at("generator").get<std::string>();
  m.config = h.at("config");
  m.seed = h.value("seed", std::uint64_t{0});
  std::ifstream in(m.manifest_path());
  if (!in) throw DataError("missing manifest " + m.manifest_path().string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      m.records.push_back(manifest_record_from(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(m.manifest_path().string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Writers

struct GenerationSummary {
  std::map<std::string, std::size_t> counts;
  long attempts = 0;         // rde: scenes sampled
  long rect_rejections = 0;  // rde: single-rect resamples
};

inline void write_rde_sample(const DatasetManifest& m, const ManifestRecord& r, const Scene& s) {
  write_png_rgb8(m.path_of(r.input), std::size_t(s.width), std::size_t(s.height), s.image);
  write_png_gray16(m.path_of(r.target), std::size_t(s.width), std::size_t(s.height), s.label);
}

inline GenerationSummary generate_rde_dataset(const fs::path& dir, const RdeConfig& cfg, std::uint64_t seed,
                                              std::size_t count) {
  cfg.validate();
  DatasetManifest m{dir, "rde", to_json(cfg), seed, {}};
  fs::create_directories(dir / "samples");
  const std::string hash = config_hash(m.config);
  m.records.resize(count);
  std::vector<int> attempts(count, 0);
  std::vector<long> rejections(count, 0);
  parallel_for(count, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "rde-%06zu", i);
    ManifestRecord& r = m.records[i];
    r = {id, "train", sample_seed(seed, i), std::string("samples/") + id + ".png",
         std::string("samples/") + id + "_label.png", "rde", hash};
    auto g = generate_rde_scene(r.seed, cfg);
    attempts[i] = g.attempts;
    rejections[i] = g.rect_rejections;
    write_rde_sample(m, r, g.scene);
  });
  write_manifest(m);
  GenerationSummary s{m.split_counts(), 0, 0};
  for (std::size_t i = 0; i < count; ++i) s.attempts += attempts[i], s.rect_rejections += rejections[i];
  return s;
}

inline GenerationSummary generate_square_dataset(const fs::path& dir, const SquareConfig& cfg) {
  const auto split = generate_centered_square(cfg);
  DatasetManifest m{dir, "centered_square", to_json(cfg), 0, {}};
  fs::create_directories(dir / "samples");
  const std::string hash = config_hash(m.config);
  std::vector<std::pair<std::string, SquareSample>> all;
  for (const auto& s : split.train) all.emplace_back("train", s);
  for (const auto& s : split.test) all.emplace_back("test", s);
  m.records.resize(all.size());
  parallel_for(all.size(), [&](std::size_t i) {
    const auto& [name, sample] = all[i];
    char id[48];
    std::snprintf(id, sizeof id, "square-%s-r%03zu-c%03zu", name.c_str(), sample.row, sample.col);
    ManifestRecord& r = m.records[i];
    r = {id, name, 0, std::string("samples/") + id + "_input.synt", std::string("samples/") + id + "_target.synt",
         "centered_square", hash};
    auto to_u8 = [](const Tensor& t) {
      std::vector<std::uint8_t> v(t.size());
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::uint8_t(t[k] > 0.5f);
      return v;
    };
    const Shape shape{1, cfg.height, cfg.width};
    const auto in = to_u8(square_input(cfg, sample));
    const auto tg = to_u8(square_target(cfg, sample));
    write_synt<std::uint8_t>(m.path_of(r.input), shape, in);
    write_synt<std::uint8_t>(m.path_of(r.target), shape, tg);
  });
  write_manifest(m);
  return {m.split_counts(), 0, 0};
}

inline GenerationSummary generate_colorcode_dataset(const fs::path& dir, const ColorCodeConfig& cfg,
                                                    std::uint64_t seed, std::size_t train_count,
                                                    std::size_t test_count) {
  cfg.validate();
  DatasetManifest m{dir, "color_code", to_json(cfg), seed, {}};
  fs::create_directories(dir / "samples");
  const std::string hash = config_hash(m.config);
  const std::size_t count = train_count + test_count;
  m.records.resize(count);
  parallel_for(count, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "cc-%06zu", i);
    ManifestRecord& r = m.records[i];
    r = {id, i < train_count ? "train" : "test", sample_seed(seed, i), std::string("samples/") + id + "_input.synt",
         std::string("samples/") + id + "_target.synt", "color_code", hash};
    const auto s = generate_colorcode(r.seed, cfg);
    write_synt(m.path_of(r.input), s.input());
    const auto y = s.target();
    write_synt<std::uint16_t>(m.path_of(r.target), Shape{y.size()}, y);
  });
  write_manifest(m);
  return {m.split_counts(), 0, 0};
}

// ---------------------------------------------------------------------------
// Loading

/// One training/evaluation example in network layout (channels x positions).
struct Example {
  std::string id;
  Tensor input;
  Tensor target;                        // centered square: 1 x N binary map
  std::vector<std::uint16_t> classes;   // color code: N class indices
  std::vector<std::uint8_t> given;      // color code: 1 where the code is shown
};

inline SyntArray load_synt_checked(const DatasetManifest& m, const std::string& rel) {
  const fs::path p = m.path_of(rel);
  if (!fs::exists(p)) throw DataError("missing sample file " + p.string());
  return read_synt(p);
}

inline Example load_example(const DatasetManifest& m, const ManifestRecord& r) {
  Example e;
  e.id = r.id;
  if (m.generator == "centered_square") {
    const auto in = load_synt_checked(m, r.input), tg = load_synt_checked(m, r.target);
    if (in.shape.size() != 3 || in.shape != tg.shape) throw DataError(r.id + ": square sample shapes disagree");
    const std::size_t n = in.shape[1] * in.shape[2];
    e.input = in.to_tensor().reshaped({1, n});
    e.target = tg.to_tensor().reshaped({1, n});
  } else if (m.generator == "color_code") {
    const auto in = load_synt_checked(m, r.input), tg = load_synt_checked(m, r.target);
    if (in.dtype() != Dtype::f32 || in.shape.size() != 2) throw DataError(r.id + ": color code input must be f32 (3+Z) x N");
    if (tg.dtype() != Dtype::u16 || tg.shape.size() != 1 || tg.shape[0] != in.shape[1]) {
      throw DataError(r.id + ": color code target must be u16 of length N");
    }
    e.input = in.to_tensor();
    e.classes = std::get<std::vector<std::uint16_t>>(tg.values);
    const std::size_t z = in.shape[0] - 3, n = in.shape[1];
    e.given.assign(n, 0);
    for (std::size_t c = 0; c < z; ++c)
      for (std::size_t p = 0; p < n; ++p)
        if (e.input(3 + c, p) != 0.f) e.given[p] = 1;
  } else {
    throw DataError("dataset generator '" + m.generator + "' cannot be loaded as training examples");
  }
  return e;
}

inline std::vector<Example> load_split(const DatasetManifest& m, const std::string& split) {
  std::vector<Example> out;
  for (const auto* r : m.split(split)) out.push_back(load_example(m, *r));
  return out;
}

// ---------------------------------------------------------------------------
// Verification of stored samples

struct SampleCheck {
  std::string id;
  bool ok = true;
  std::string reason;
};

/// Checks one stored sample from its files alone.
inline SampleCheck verify_sample(const DatasetManifest& m, const ManifestRecord& r) {
  SampleCheck c{r.id, true, {}};
  auto fail = [&](std::string why) {
    c.ok = false;
    c.reason = std::move(why);
    return c;
  };
  if (m.generator == "rde") {
    const RdeConfig cfg = rde_config_from(m.config);
    const auto img = read_png(m.path_of(r.input));
    const auto lab = read_png(m.path_of(r.target));
    if (img.channels != 3 || lab.channels != 1 || img.width != lab.width || img.height != lab.height) {
      return fail("image/label layout mismatch");
    }
    std::vector<std::uint8_t> rgb(img.samples.begin(), img.samples.end());
    const int w = int(img.width), h = int(img.height);
    auto sol = solve_rde(rgb, w, h, cfg.palette, cfg.background);
    if (!sol.ok) return fail(sol.reason);
    // Audit the recovered scene, then the stored label against the reconstruction.
    const Scene recovered = render_scene(sol.rects, w, h, cfg.palette, cfg.background);
    if (auto v = verify_unambiguous(recovered, cfg.min_visible_frac); !v) return fail(v.reason);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < sol.label.size(); ++i) mismatches += sol.label[i] != lab.samples[i];
    if (mismatches) return fail("label differs from reconstruction at " + std::to_string(mismatches) + " pixels");
    return c;
  }
  if (m.generator == "centered_square") {
    const SquareConfig cfg = square_config_from(m.config);
    const Example e = load_example(m, r);
    std::size_t white = 0, at = 0;
    for (std::size_t i = 0; i < e.input.size(); ++i)
      if (e.input[i] != 0.f) ++white, at = i;
    if (white != 1) return fail("input must contain exactly one white pixel");
    const SquareSample s{at / cfg.width, at % cfg.width};
    const std::size_t rad = cfg.side / 2;
    if (s.row < rad || s.col < rad || s.row + rad >= cfg.height || s.col + rad >= cfg.width) {
      return fail("square would be cropped");
    }
    if (e.target != square_target(cfg, s)) return fail("target is not the square around the white pixel");
    return c;
  }
  if (m.generator == "color_code") {
    const ColorCodeConfig cfg = colorcode_config_from(m.config);
    const Example e = load_example(m, r);
    const std::size_t n = e.classes.size();
    std::map<std::array<float, 3>, int> shown;
    std::size_t masked = 0;
    for (std::size_t p = 0; p < n; ++p) {
      masked += !e.given[p];
      if (!e.given[p]) continue;
      for (std::size_t k = 0; k < cfg.z; ++k)
        if (e.input(3 + k, p) != 0.f) shown[{e.input(0, p), e.input(1, p), e.input(2, p)}] = int(k);
    }
    if (masked != cfg.masked_count()) return fail("masked count " + std::to_string(masked) + " differs from config");
    for (std::size_t p = 0; p < n; ++p) {
      auto it = shown.find({e.input(0, p), e.input(1, p), e.input(2, p)});
      if (it == shown.end()) return fail("color at position " + std::to_string(p) + " never shows its code");
      if (it->second != e.classes[p]) return fail("target at position " + std::to_string(p) + " contradicts the shown code");
    }
    return c;
  }
  return fail("unknown generator '" + m.generator + "'");
}

}  // namespace synthprobe
