#include <gtest/gtest.h>

#include <map>
#include <set>

#include "synthprobe/datasets.hpp"

using namespace synthprobe;

namespace {

const std::vector<Rgb> kPalette = hue_palette(10);
const Rgb kBg{32, 32, 32};

Scene scene_of(std::vector<Rect> rects, int w = 64, int h = 64) {
  for (std::size_t i = 0; i < rects.size(); ++i) {
    rects[i].z = int(i);
    rects[i].color_idx = int(i);
  }
  return render_scene(rects, w, h, kPalette, kBg);
}

}  // namespace

TEST(Seeds, SampleSeedsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(sample_seed(7, i));
  EXPECT_EQ(seen.size(), 10000u);
  EXPECT_EQ(sample_seed(7, 3), sample_seed(7, 3));
  EXPECT_NE(sample_seed(7, 3), sample_seed(8, 3));
}

TEST(Palette, TenDistinctSaturatedHues) {
  ASSERT_EQ(kPalette.size(), 10u);
  EXPECT_EQ(kPalette[0], (Rgb{255, 0, 0}));
  EXPECT_EQ(kPalette[5], (Rgb{0, 255, 255}));
  EXPECT_EQ(std::set<Rgb>(kPalette.begin(), kPalette.end()).size(), 10u);
  for (const auto& c : kPalette) {
    EXPECT_EQ(*std::max_element(c.begin(), c.end()), 255);  // value 1
    EXPECT_EQ(*std::min_element(c.begin(), c.end()), 0);    // saturation 1
  }
}

TEST(Rde, SingleRectLabels) {
  RdeConfig cfg;
  cfg.n_rects = 1;
  auto g = generate_rde_scene(5, cfg);
  const Rect& r = g.scene.rects.at(0);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) EXPECT_EQ(g.scene.label[std::size_t(y * 128 + x)], r.contains(x, y) ? 2 : 1);
}

TEST(Rde, SameSeedIsBitIdentical) {
  RdeConfig cfg;
  auto a = generate_rde_scene(99, cfg), b = generate_rde_scene(99, cfg);
  EXPECT_EQ(a.scene.image, b.scene.image);
  EXPECT_EQ(a.scene.label, b.scene.label);
  EXPECT_EQ(a.scene.rects, b.scene.rects);
  EXPECT_NE(generate_rde_scene(100, cfg).scene.image, a.scene.image);
}

TEST(Rde, LabelIsOnePlusCoverage) {
  auto g = generate_rde_scene(3, RdeConfig{});
  const auto& s = g.scene;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      int count = 0;
      for (const auto& r : s.rects) count += r.contains(x, y);
      ASSERT_EQ(s.label[std::size_t(y * s.width + x)], 1 + count);
    }
}

TEST(Rde, ImageIsPainterRendering) {
  auto g = generate_rde_scene(4, RdeConfig{});
  const auto& s = g.scene;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      Rgb expect = kBg;
      int best_z = -1;
      for (const auto& r : s.rects)
        if (r.contains(x, y) && r.z > best_z) best_z = r.z, expect = kPalette[std::size_t(r.color_idx)];
      const std::size_t i = 3 * std::size_t(y * s.width + x);
      ASSERT_EQ((Rgb{s.image[i], s.image[i + 1], s.image[i + 2]}), expect);
    }
}

TEST(Rde, RectInvariantsHold) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = generate_rde_scene(seed, RdeConfig{}).scene;
    std::set<int> zs, colors;
    for (const auto& r : s.rects) {
      EXPECT_TRUE(0 <= r.x0 && r.x0 < r.x1 && r.x1 < 128 && 0 <= r.y0 && r.y0 < r.y1 && r.y1 < 128);
      EXPECT_GE(r.x1 - r.x0 + 1, 12);
      EXPECT_LE(r.x1 - r.x0 + 1, 96);
      zs.insert(r.z);
      colors.insert(r.color_idx);
    }
    EXPECT_EQ(zs.size(), 10u);
    EXPECT_EQ(colors.size(), 10u);
  }
}

TEST(TJunctions, DisjointRectsHaveNone) {
  auto s = scene_of({{2, 2, 10, 10}, {20, 20, 30, 30}});
  EXPECT_TRUE(find_tjunctions(s).empty());
}

TEST(TJunctions, CornerInsideOccluderGivesTwo) {
  // B (lower, index 0) has its top-left corner inside A (upper, index 1).
  auto s = scene_of({{30, 30, 60, 60}, {10, 10, 40, 40}});
  auto j = find_tjunctions(s);
  ASSERT_EQ(j.size(), 2u);
  for (const auto& t : j) {
    EXPECT_EQ(t.upper, 1);
    EXPECT_EQ(t.lower, 0);
  }
  std::set<std::pair<int, int>> pts;
  for (const auto& t : j) pts.insert({t.x, t.y});
  EXPECT_EQ(pts, (std::set<std::pair<int, int>>{{30, 41}, {41, 30}}));
  EXPECT_TRUE(verify_unambiguous(s));
}

TEST(TJunctions, CrossingBarsGiveFour) {
  // A horizontal bar over a vertical bar: the lower bar's two sides each cut both long edges.
  auto s = scene_of({{20, 5, 30, 50}, {5, 20, 50, 30}});
  auto j = find_tjunctions(s);
  EXPECT_EQ(j.size(), 4u);
  for (const auto& t : j) EXPECT_EQ(t.upper, 1);
}

TEST(Verify, AlignedSidesFail) {
  auto s = scene_of({{10, 10, 30, 30}, {10, 20, 40, 45}});
  auto r = verify_unambiguous(s);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.reason.find("aligned sides"), std::string::npos);
}

TEST(Verify, FullyOccludedFails) {
  auto s = scene_of({{20, 20, 30, 30}, {10, 10, 40, 40}});
  auto r = verify_unambiguous(s);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.reason.find("hidden rectangle"), std::string::npos);
}

TEST(Verify, BarelyVisibleFails) {
  // 50x50 lower rect with only a 2-pixel-wide strip showing (< 5% of its area).
  auto s = scene_of({{10, 10, 59, 59}, {5, 5, 57, 63}});
  auto r = verify_unambiguous(s);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.reason.find("insufficient visibility"), std::string::npos);
}

TEST(Verify, HiddenSideFails) {
  // The lower rect's right side lies entirely under the occluder.
  auto s = scene_of({{10, 20, 40, 30}, {30, 10, 50, 45}});
  auto r = verify_unambiguous(s);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.reason.find("hidden side"), std::string::npos);
}

TEST(Verify, JunctionsCoveredByThirdRectLeavePairUnordered) {
  // A (index 1) overlaps B (index 0) at B's top-left corner; C (index 2, topmost)
  // covers both junction points without covering any side of A or B entirely.
  // C does not overlap... it does overlap both, so give C the ordering to each:
  // C's own junctions order C over A and C over B, but nothing relates A and B.
  auto s = scene_of({{30, 30, 60, 60}, {10, 10, 40, 40}, {28, 28, 43, 43}});
  auto j = find_tjunctions(s);
  for (const auto& t : j) EXPECT_FALSE((t.upper == 1 && t.lower == 0) || (t.upper == 0 && t.lower == 1));
  auto r = verify_unambiguous(s);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.reason.find("unordered pair (rects 0, 1)"), std::string::npos) << r.reason;
}

TEST(Verify, ContainedRectHasNoJunctionsAndIsUnordered) {
  // Small rect on top of a large one: depth is ambiguous without a junction.
  auto s = scene_of({{10, 10, 50, 50}, {20, 20, 30, 30}});
  auto r = verify_unambiguous(s);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.reason.find("unordered pair"), std::string::npos);
}

TEST(Rde, ThousandScenesPassVerifierAndSolver) {
  RdeConfig cfg;
  long attempts = 0, occluded = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    auto g = generate_rde_scene(sample_seed(2024, i), cfg);
    attempts += g.attempts;
    const auto& s = g.scene;
    ASSERT_TRUE(verify_unambiguous(s)) << "scene " << i;
    // Junction ordering agrees with the generation z-order.
    const auto junctions = find_tjunctions(s);
    const auto above = ordering_closure(s.rects.size(), junctions);
    bool any_overlap = false;
    for (std::size_t a = 0; a < s.rects.size(); ++a)
      for (std::size_t b = 0; b < s.rects.size(); ++b) {
        if (a == b || !overlaps(s.rects[a], s.rects[b])) continue;
        any_overlap = true;
        ASSERT_EQ(bool(above[a][b]), s.rects[a].z > s.rects[b].z);
      }
    occluded += any_overlap;
    auto sol = solve_rde(s.image, s.width, s.height, cfg.palette, cfg.background);
    ASSERT_TRUE(sol.ok) << sol.reason;
    ASSERT_EQ(sol.label, s.label) << "scene " << i;
  }
  RecordProperty("mean_attempts", std::to_string(double(attempts) / 1000.0));
  RecordProperty("occlusion_rate", std::to_string(double(occluded) / 1000.0));
  std::printf("rde: mean attempts %.2f, occlusion rate %.3f\n", double(attempts) / 1000.0, double(occluded) / 1000.0);
}

TEST(Rde, NoFilterEmitsRawScenes) {
  RdeConfig cfg;
  cfg.filter = false;
  int failing = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto g = generate_rde_scene(i, cfg);
    EXPECT_EQ(g.attempts, 1);
    failing += !verify_unambiguous(g.scene);
  }
  EXPECT_GT(failing, 0);
}

TEST(Rde, RetryBudgetAndConfigErrors) {
  RdeConfig cfg;
  cfg.n_rects = 11;
  EXPECT_THROW(generate_rde_scene(1, cfg), ConfigError);
  cfg = RdeConfig{};
  cfg.min_side = 90;  // ten huge rects can never all stay visible
  cfg.max_retries = 20;
  try {
    generate_rde_scene(1, cfg);
    FAIL();
  } catch (const GenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("n_rects=10"), std::string::npos);
  }
}

TEST(Solver, RejectsForeignColors) {
  auto s = scene_of({{2, 2, 10, 10}});
  s.image[0] = 1;
  EXPECT_FALSE(solve_rde(s.image, s.width, s.height, kPalette, kBg).ok);
}

TEST(CenteredSquare, FullScaleSplit) {
  auto split = generate_centered_square({64, 64, 21});
  EXPECT_EQ(split.train.size(), 484u);
  EXPECT_EQ(split.test.size(), 1452u);
}

TEST(CenteredSquare, ReducedScaleSplit) {
  auto split = generate_centered_square({32, 32, 11});
  EXPECT_EQ(split.train.size(), 121u);
  EXPECT_EQ(split.test.size(), 363u);
}

TEST(CenteredSquare, SplitsPartitionTheNoCropGrid) {
  for (auto cfg : {SquareConfig{64, 64, 21}, SquareConfig{32, 32, 11}, SquareConfig{20, 30, 5}}) {
    auto split = generate_centered_square(cfg);
    std::set<std::pair<std::size_t, std::size_t>> train, test;
    for (auto s : split.train) train.insert({s.row, s.col});
    for (auto s : split.test) test.insert({s.row, s.col});
    EXPECT_EQ(train.size(), split.train.size());
    for (auto p : train) EXPECT_FALSE(test.count(p));
    const std::size_t r = cfg.side / 2;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < cfg.height; ++i)
      for (std::size_t j = 0; j < cfg.width; ++j) {
        const bool fits = i >= r && j >= r && i + r < cfg.height && j + r < cfg.width;
        valid += fits;
        EXPECT_EQ(fits, train.count({i, j}) + test.count({i, j}) == 1);
      }
    EXPECT_EQ(valid, train.size() + test.size());
  }
}

TEST(CenteredSquare, TrainIsCenteredAndRowMajor) {
  SquareConfig cfg{64, 64, 21};
  auto split = generate_centered_square(cfg);
  // Valid centers 10..53; train block 22 wide starting at offset 11.
  EXPECT_EQ(split.train.front().row, 21u);
  EXPECT_EQ(split.train.front().col, 21u);
  EXPECT_EQ(split.train.back().row, 42u);
  EXPECT_EQ(split.train.back().col, 42u);
  EXPECT_EQ(split.test.front().row, 10u);
  for (std::size_t i = 1; i < split.test.size(); ++i) {
    auto a = split.test[i - 1], b = split.test[i];
    EXPECT_TRUE(a.row < b.row || (a.row == b.row && a.col < b.col));
  }
}

TEST(CenteredSquare, SampleImages) {
  SquareConfig cfg{32, 32, 11};
  for (auto s : generate_centered_square(cfg).test) {
    auto x = square_input(cfg, s);
    auto y = square_target(cfg, s);
    float xs = 0, ys = 0;
    for (float v : x.data()) xs += v;
    for (float v : y.data()) ys += v;
    ASSERT_EQ(xs, 1.f);
    ASSERT_EQ(ys, 121.f);
    ASSERT_EQ(y[s.row * 32 + s.col], 1.f);
  }
}

TEST(CenteredSquare, EvenSideIsConfigError) {
  EXPECT_THROW(generate_centered_square({64, 64, 20}), ConfigError);
  EXPECT_THROW(generate_centered_square({8, 8, 9}), ConfigError);
}

TEST(ColorCode, SingleColorDegenerateCase) {
  ColorCodeConfig cfg;
  cfg.k = 1;
  auto s = generate_colorcode(1, cfg);
  auto y = s.target();
  for (std::size_t p = 0; p < cfg.n; ++p) {
    EXPECT_EQ(s.sigma[p], 0);
    EXPECT_EQ(y[p], s.codes[0]);
  }
}

TEST(ColorCode, Deterministic) {
  ColorCodeConfig cfg;
  auto a = generate_colorcode(5, cfg), b = generate_colorcode(5, cfg);
  EXPECT_EQ(a.input(), b.input());
  EXPECT_EQ(a.target(), b.target());
  EXPECT_NE(generate_colorcode(6, cfg).input(), a.input());
}

TEST(ColorCode, TenThousandSamplesAreWellPosed) {
  ColorCodeConfig cfg;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    auto s = generate_colorcode(sample_seed(11, i), cfg);
    std::size_t masked = 0;
    std::vector<std::size_t> shown(cfg.k, 0), used(cfg.k, 0);
    for (std::size_t p = 0; p < cfg.n; ++p) {
      masked += !s.given[p];
      shown[s.sigma[p]] += s.given[p];
      ++used[s.sigma[p]];
    }
    ASSERT_EQ(masked, 64u);
    for (std::size_t c = 0; c < cfg.k; ++c) {
      ASSERT_GE(shown[c], 1u);
      ASSERT_GE(used[c], 1u);
    }
    ASSERT_EQ(std::set<std::uint16_t>(s.codes.begin(), s.codes.end()).size(), cfg.k);
    ASSERT_EQ(std::set<Rgb>(s.colors.begin(), s.colors.end()).size(), cfg.k);
  }
}

TEST(ColorCode, MaskedTargetsAreRecoverable) {
  ColorCodeConfig cfg{64, 6, 16};
  for (std::uint64_t i = 0; i < 500; ++i) {
    auto s = generate_colorcode(i, cfg);
    auto x = s.input();
    auto y = s.target();
    // Decode from the input tensor alone: color -> shown code.
    std::map<std::array<float, 3>, int> code_of;
    for (std::size_t p = 0; p < cfg.n; ++p)
      for (std::size_t c = 0; c < cfg.z; ++c)
        if (x(3 + c, p) == 1.f) code_of[{x(0, p), x(1, p), x(2, p)}] = int(c);
    for (std::size_t p = 0; p < cfg.n; ++p) ASSERT_EQ(code_of.at({x(0, p), x(1, p), x(2, p)}), y[p]);
  }
}

TEST(ColorCode, InputLayout) {
  ColorCodeConfig cfg{16, 3, 8};
  auto s = generate_colorcode(3, cfg);
  auto x = s.input();
  ASSERT_EQ(x.shape(), (Shape{11, 16}));
  for (std::size_t p = 0; p < 16; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(x(ch, p), float(s.colors[s.sigma[p]][ch]) / 255.f);
    float onehot = 0;
    for (std::size_t c = 0; c < 8; ++c) onehot += x(3 + c, p);
    EXPECT_EQ(onehot, s.given[p] ? 1.f : 0.f);
  }
}

TEST(ColorCode, MinColorDistance) {
  ColorCodeConfig cfg;
  cfg.min_color_dist = 40;
  for (std::uint64_t i = 0; i < 50; ++i) {
    auto s = generate_colorcode(i, cfg);
    for (std::size_t a = 0; a < cfg.k; ++a)
      for (std::size_t b = a + 1; b < cfg.k; ++b) {
        int d = 0;
        for (int ch = 0; ch < 3; ++ch) d = std::max(d, std::abs(s.colors[a][std::size_t(ch)] - s.colors[b][std::size_t(ch)]));
        EXPECT_GE(d, 40);
      }
  }
}

TEST(ColorCode, WithoutRepairSomeSamplesAreIllPosed) {
  ColorCodeConfig cfg{16, 8, 16};
  cfg.repair = false;
  int bad = 0;
  for (std::uint64_t i = 0; i < 200; ++i) bad += !generate_colorcode(i, cfg).well_posed();
  EXPECT_GT(bad, 0);
  cfg.repair = true;
  for (std::uint64_t i = 0; i < 200; ++i) EXPECT_TRUE(generate_colorcode(i, cfg).well_posed());
}

TEST(ColorCode, ConfigErrors) {
  EXPECT_THROW(generate_colorcode(1, ColorCodeConfig{128, 40, 32}), ConfigError);
  EXPECT_THROW(generate_colorcode(1, ColorCodeConfig{16, 9, 32}), ConfigError);
  ColorCodeConfig tight{64, 32, 32};  // 32 colors over 64 positions: surjective draws are rare
  tight.max_retries = 2;
  int thrown = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    try {
      generate_colorcode(seed, tight);
    } catch (const GenerationError&) {
      ++thrown;
    }
  }
  EXPECT_GT(thrown, 5);
}
