#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "synthprobe/dataset_io.hpp"

using namespace synthprobe;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("synthprobe_dsio_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> hashes(const DatasetManifest& m) {
  std::map<std::string, std::string> out;
  for (const auto& r : m.records) {
    out[r.input] = file_hash(m.path_of(r.input));
    out[r.target] = file_hash(m.path_of(r.target));
  }
  return out;
}

}  // namespace

TEST(Manifest, RoundTripsThroughDisk) {
  const auto dir = scratch("manifest");
  DatasetManifest m{dir, "color_code", json{{"n", 8}}, 42, {}};
  m.records.push_back({"a", "train", 7, "samples/a_in.synt", "samples/a_tg.synt", "color_code", "abc"});
  m.records.push_back({"b", "test", 9, "samples/b_in.synt", "samples/b_tg.synt", "color_code", "abc"});
  write_manifest(m);
  const auto back = read_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(back.generator, "color_code");
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.config, m.config);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(to_json(back.records[1]), to_json(m.records[1]));
  EXPECT_EQ(back.split_counts().at("train"), 1u);
}

TEST(Manifest, MissingHeaderIsDataError) {
  const auto dir = scratch("missing");
  fs::create_directories(dir);
  EXPECT_THROW(read_manifest(dir), DataError);
}

TEST(ConfigHash, StableAndSensitive) {
  EXPECT_EQ(config_hash(json{{"a", 1}}), config_hash(json{{"a", 1}}));
  EXPECT_NE(config_hash(json{{"a", 1}}), config_hash(json{{"a", 2}}));
}

TEST(Threads, EnvironmentCapsWorkers) {
  ::setenv("SYNTHPROBE_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  ::setenv("SYNTHPROBE_THREADS", "zero", 1);
  EXPECT_THROW(worker_count(), ConfigError);
  ::unsetenv("SYNTHPROBE_THREADS");
  EXPECT_GE(worker_count(), 1u);
}

TEST(RdeDataset, FilesVerifyAndAreDeterministic) {
  RdeConfig cfg;
  cfg.width = cfg.height = 64;
  cfg.n_rects = 4;
  cfg.min_side = 8;
  cfg.max_side = 40;
  const auto a = scratch("rde_a"), b = scratch("rde_b");
  const auto sa = generate_rde_dataset(a, cfg, 5, 12);
  generate_rde_dataset(b, cfg, 5, 12);
  EXPECT_EQ(sa.counts.at("train"), 12u);
  EXPECT_GE(sa.attempts, 12);
  const auto ma = read_manifest(a), mb = read_manifest(b);
  EXPECT_EQ(hashes(ma), hashes(mb));
  for (const auto& r : ma.records) {
    EXPECT_TRUE(fs::exists(ma.path_of(r.input)));
    const auto c = verify_sample(ma, r);
    EXPECT_TRUE(c.ok) << r.id << ": " << c.reason;
  }
}

TEST(RdeDataset, ZeroCountGivesEmptyManifest) {
  const auto dir = scratch("rde_empty");
  generate_rde_dataset(dir, RdeConfig{}, 1, 0);
  EXPECT_TRUE(read_manifest(dir).records.empty());
}

TEST(RdeDataset, StoredAlignedSceneFailsVerification) {
  RdeConfig cfg;
  cfg.width = cfg.height = 48;
  const auto dir = scratch("rde_aligned");
  DatasetManifest m{dir, "rde", to_json(cfg), 0, {}};
  m.records.push_back({"bad", "train", 0, "bad.png", "bad_label.png", "rde", config_hash(m.config)});
  fs::create_directories(dir);
  // Both rects share the left edge x = 5.
  const Scene s = render_scene({{5, 5, 20, 20, 0, 0}, {5, 12, 30, 30, 1, 1}}, cfg.width, cfg.height, cfg.palette,
                               cfg.background);
  write_rde_sample(m, m.records[0], s);
  write_manifest(m);
  const auto c = verify_sample(read_manifest(dir), m.records[0]);
  EXPECT_FALSE(c.ok);
  EXPECT_EQ(c.reason.rfind("aligned sides", 0), 0u) << c.reason;
}

TEST(SquareDataset, SplitsAndFilesMatchTheGenerator) {
  const auto dir = scratch("square");
  const SquareConfig cfg{16, 16, 5};
  const auto s = generate_square_dataset(dir, cfg);
  const auto split = generate_centered_square(cfg);
  EXPECT_EQ(s.counts.at("train"), split.train.size());
  EXPECT_EQ(s.counts.at("test"), split.test.size());
  const auto m = read_manifest(dir);
  for (const auto& r : m.records) EXPECT_TRUE(verify_sample(m, r).ok) << r.id;
  const auto train = load_split(m, "train");
  ASSERT_EQ(train.size(), split.train.size());
  EXPECT_EQ(train[0].input.shape(), (Shape{1, 256}));
  EXPECT_EQ(train[0].target, square_target(cfg, split.train[0]));
}

TEST(SquareDataset, TamperedTargetFails) {
  const auto dir = scratch("square_bad");
  const SquareConfig cfg{16, 16, 5};
  generate_square_dataset(dir, cfg);
  const auto m = read_manifest(dir);
  const auto& r = m.records.front();
  std::vector<std::uint8_t> zeros(256, 0);
  write_synt<std::uint8_t>(m.path_of(r.target), Shape{1, 16, 16}, zeros);
  const auto c = verify_sample(m, r);
  EXPECT_FALSE(c.ok);
  EXPECT_EQ(c.reason, "target is not the square around the white pixel");
}

TEST(ColorCodeDataset, LoadsExamplesAndVerifies) {
  const auto dir = scratch("cc");
  ColorCodeConfig cfg{32, 6, 8, 0.5, 0, 10000, true};
  generate_colorcode_dataset(dir, cfg, 3, 20, 10);
  const auto m = read_manifest(dir);
  EXPECT_EQ(m.split_counts().at("train"), 20u);
  EXPECT_EQ(m.split_counts().at("test"), 10u);
  for (const auto& r : m.records) EXPECT_TRUE(verify_sample(m, r).ok) << r.id;
  const auto test = load_split(m, "test");
  ASSERT_EQ(test.size(), 10u);
  const auto ref = generate_colorcode(m.split("test")[0]->seed, cfg);
  EXPECT_EQ(test[0].input, ref.input());
  EXPECT_EQ(test[0].classes, ref.target());
  std::size_t hidden = 0;
  for (auto g : test[0].given) hidden += !g;
  EXPECT_EQ(hidden, cfg.masked_count());
}

TEST(ColorCodeDataset, WithoutRepairSomeSamplesFail) {
  const auto dir = scratch("cc_norepair");
  ColorCodeConfig cfg{32, 8, 8, 0.75, 0, 10000, false};
  generate_colorcode_dataset(dir, cfg, 3, 40, 0);
  const auto m = read_manifest(dir);
  std::size_t failed = 0;
  for (const auto& r : m.records) failed += !verify_sample(m, r).ok;
  EXPECT_GT(failed, 0u);
}
