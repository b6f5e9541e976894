// synthprobe command-line entry point.
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 generation budget or
// missing report, 4 verify failure, 5 equivariance above tolerance.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "synthprobe/dataset_io.hpp"
#include "synthprobe/trainer.hpp"

using namespace synthprobe;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kBudget = 3, kVerify = 4, kEquivariance = 5 };

struct MissingReport : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_run_json(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    const json& resolved) {
  fs::create_directories(dir);
  std::ofstream out(dir / "run.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "run.json").string());
  out << json{{"command", command}, {"argv", argv}, {"resolved", resolved}}.dump(2) << '\n';
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct Options {
  std::string out = ".";
  std::uint64_t seed = 0;
  std::size_t count = 1000;
  RdeConfig rde;
  bool no_filter = false;
  std::size_t palette_size = 10;
  SquareConfig square;
  ColorCodeConfig cc;
  std::size_t cc_train = 5000, cc_test = 2000;
  bool no_repair = false;
  std::string manifest;
  std::string config;
  std::optional<std::uint64_t> train_seed, data_seed;
  std::optional<std::size_t> epochs;
  std::string weights;
  std::string split = "test";
  std::string shifts = "all";
  double tol = 1e-4;
  std::string encoding = "fourier_decor";
  std::string geometry = "seq:16";
  std::size_t hidden = 8, m = 8, c_pe = 0;  // c_pe 0: half a period per axis
  std::vector<std::string> runs;
  bool csv = false;
};

Geometry parse_geometry(const std::string& g) {
  unsigned long a = 0, b = 0;
  if (std::sscanf(g.c_str(), "grid:%lux%lu", &a, &b) == 2 && a > 0 && b > 0) return Geometry::grid(a, b);
  if (std::sscanf(g.c_str(), "seq:%lu", &a) == 1 && a > 0) return Geometry::seq(a);
  throw ConfigError("geometry must be seq:N or grid:HxW, got '" + g + "'");
}

int gen_rde(const Options& o, const std::vector<std::string>& argv) {
  RdeConfig cfg = o.rde;
  cfg.filter = !o.no_filter;
  cfg.palette = hue_palette(o.palette_size);
  cfg.validate();
  const auto s = generate_rde_dataset(o.out, cfg, o.seed, o.count);
  write_run_json(o.out, "gen-rde", argv, {{"config", to_json(cfg)}, {"seed", o.seed}, {"count", o.count}});
  std::cout << "train: " << o.count << '\n';
  const double rate = s.attempts > 0 ? 1.0 - double(o.count) / double(s.attempts) : 0.0;
  std::cout << "scenes sampled: " << s.attempts << ", scene rejection rate: " << std::fixed << std::setprecision(4)
            << rate << ", rect resamples: " << s.rect_rejections << '\n';
  return kOk;
}

int gen_square(const Options& o, const std::vector<std::string>& argv) {
  o.square.validate();
  const auto s = generate_square_dataset(o.out, o.square);
  write_run_json(o.out, "gen-square", argv, {{"config", to_json(o.square)}});
  std::cout << "train: " << s.counts.at("train") << ", test: " << s.counts.at("test") << '\n';
  return kOk;
}

int gen_colorcode(const Options& o, const std::vector<std::string>& argv) {
  ColorCodeConfig cfg = o.cc;
  cfg.repair = !o.no_repair;
  cfg.validate();
  const auto s = generate_colorcode_dataset(o.out, cfg, o.seed, o.cc_train, o.cc_test);
  write_run_json(o.out, "gen-colorcode", argv,
                 {{"config", to_json(cfg)}, {"seed", o.seed}, {"train", o.cc_train}, {"test", o.cc_test}});
  auto count = [&](const char* k) { return s.counts.count(k) ? s.counts.at(k) : 0; };
  std::cout << "train: " << count("train") << ", test: " << count("test") << '\n';
  return kOk;
}

int verify(const Options& o, const std::vector<std::string>& argv) {
  const DatasetManifest m = read_manifest(o.manifest);
  std::vector<SampleCheck> checks(m.records.size());
  parallel_for(m.records.size(), [&](std::size_t i) { checks[i] = verify_sample(m, m.records[i]); });
  std::size_t failed = 0;
  fs::create_directories(o.out);
  std::ofstream report(fs::path(o.out) / "verify.jsonl", std::ios::trunc);
  for (const auto& c : checks) {
    report << json{{"id", c.id}, {"ok", c.ok}, {"reason", c.reason}}.dump() << '\n';
    if (!c.ok) {
      ++failed;
      std::cout << "FAIL " << c.id << ": " << c.reason << '\n';
    }
  }
  write_run_json(o.out, "verify", argv, {{"manifest", o.manifest}, {"generator", m.generator}});
  std::cout << "checked " << checks.size() << " samples, " << failed << " failed\n";
  return failed ? kVerify : kOk;
}

int train_cmd(const Options& o, const std::vector<std::string>& argv) {
  json j = read_json_file(o.config);
  if (o.train_seed) j["train"]["seed"] = *o.train_seed;
  if (o.data_seed) j["data_seed"] = *o.data_seed;
  if (o.epochs) j["train"]["epochs"] = *o.epochs;
  const ExperimentConfig cfg = experiment_config_from(j);
  write_run_json(o.out, "train", argv, to_json(cfg));
  const auto r = run_experiment(cfg, o.out, [](const EpochLog& l) {
    std::cout << "epoch " << l.epoch << " loss " << std::setprecision(6) << l.train_loss;
    if (l.eval_metric) std::cout << " eval " << *l.eval_metric;
    std::cout << '\n' << std::flush;
  });
  const std::string metric = metric_name(cfg.net.task);
  std::cout << "train " << metric << ": " << r.train_report.at(metric) << ", test " << metric << ": "
            << r.test_report.at(metric) << ", generalization_gap: "
            << generalization_gap(r.test_report.at("loss"), r.train_report.at("loss")) << '\n';
  return kOk;
}

int eval_cmd(const Options& o, const std::vector<std::string>& argv) {
  const ProbeNet<float> net = load_weights(o.weights);
  const DatasetManifest m = read_manifest(o.manifest);
  const auto data = load_split(m, o.split);
  const EvalReport r = evaluate(net, data, o.split);
  write_run_json(o.out, "eval", argv, {{"weights", o.weights}, {"manifest", o.manifest}, {"split", o.split}});
  std::ofstream(fs::path(o.out) / "eval.json", std::ios::trunc) << json(r).dump(2) << '\n';
  for (const auto& [k, v] : r.metrics) std::cout << k << ": " << std::setprecision(6) << v << '\n';
  return kOk;
}

int equiv_check(const Options& o, const std::vector<std::string>& argv) {
  LayerFn<float> f;
  Geometry g;
  std::size_t channels = 0;
  json resolved = {{"shifts", o.shifts}, {"tol", o.tol}, {"seed", o.seed}};
  std::optional<ProbeNet<float>> net;
  std::optional<LambdaContext<float>> ctx;
  LambdaWeights<float> lw;
  if (!o.weights.empty()) {
    net.emplace(load_weights(o.weights));
    g = net->spec.geometry;
    channels = net->spec.in_channels;
    f = [&](const Tensor& x) { return probe_logits(*net, x); };
    resolved["weights"] = o.weights;
  } else {
    g = parse_geometry(o.geometry);
    const Encoding e = parse_encoding(o.encoding);
    std::size_t c_pe = o.c_pe;
    if (c_pe == 0) c_pe = g.is_grid() ? 2 * (std::min(g.height, g.width) / 2) : g.width / 2;
    LambdaConfig cfg{o.hidden, o.hidden, o.m, uses_sinusoids(e) ? c_pe : 0, e, false, g};
    ctx.emplace(cfg);
    std::mt19937_64 rng(o.seed);
    lw = init_lambda_weights<float>(cfg, rng);
    channels = o.hidden;
    f = [&](const Tensor& x) { return lambda_forward(x, lw, *ctx); };
    resolved["layer"] = {{"encoding", o.encoding}, {"geometry", o.geometry}, {"hidden", o.hidden}, {"m", o.m},
                         {"c_pe", cfg.c_pe}};
  }

  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> shifts;
  std::mt19937_64 rng(mix64(o.seed));
  if (o.shifts == "all") {
    for (std::size_t dy = 0; dy < g.height; ++dy)
      for (std::size_t dx = 0; dx < g.width; ++dx) shifts.emplace_back(dy, dx);
  } else if (unsigned long k = 0; std::sscanf(o.shifts.c_str(), "random:%lu", &k) == 1 && k > 0) {
    std::uniform_int_distribution<std::size_t> ry(0, g.height - 1), rx(0, g.width - 1);
    for (std::size_t i = 0; i < k; ++i) shifts.emplace_back(ry(rng), rx(rng));
  } else {
    throw ConfigError("--shifts must be all or random:K");
  }

  Tensor x({channels, g.positions()});
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : x.data()) v = u(rng);

  write_run_json(o.out, "equiv-check", argv, resolved);
  double worst = 0;
  std::cout << (g.is_grid() ? "dy dx" : "shift") << " max_deviation\n";
  for (const auto& [dy, dx] : shifts) {
    const double d = shift_deviation(f, x, g, dy, dx);
    worst = std::max(worst, d);
    if (g.is_grid()) std::cout << dy << ' ' << dx << ' ';
    else std::cout << dx << ' ';
    std::cout << std::scientific << std::setprecision(3) << d << std::defaultfloat << '\n';
  }
  std::cout << "shifts: " << shifts.size() << ", max deviation: " << std::scientific << worst << ", tol: " << o.tol
            << '\n';
  return worst <= o.tol ? kOk : kEquivariance;
}

int report_cmd(const Options& o, const std::vector<std::string>& argv) {
  struct Row {
    std::string run, experiment, variant, metric;
    double train, test, gap;
  };
  std::vector<Row> rows;
  for (const auto& dir : o.runs) {
    const fs::path p = fs::path(dir) / "report.json";
    if (!fs::exists(p)) throw MissingReport("missing report " + p.string());
    const json j = read_json_file(p);
    const std::string metric = j.at("metric").get<std::string>();
    EvalReport tr = j.at("train").get<EvalReport>(), te = j.at("test").get<EvalReport>();
    rows.push_back({dir, j.at("experiment").get<std::string>(), j.at("variant").get<std::string>(), metric,
                    100.0 * tr.at(metric), 100.0 * te.at(metric), j.at("generalization_gap").get<double>()});
  }
  write_run_json(o.out, "report", argv, {{"runs", o.runs}});
  // Best = highest train/test metric, smallest gap.
  std::size_t best_train = 0, best_test = 0, best_gap = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].train > rows[best_train].train) best_train = i;
    if (rows[i].test > rows[best_test].test) best_test = i;
    if (std::abs(rows[i].gap) < std::abs(rows[best_gap].gap)) best_gap = i;
  }
  auto cell = [&](double v, bool best) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v << (best && rows.size() > 1 ? "*" : "");
    return s.str();
  };
  if (o.csv) {
    std::cout << "run,experiment,variant,metric,train,test,generalization_gap\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      std::cout << r.run << ',' << r.experiment << ',' << r.variant << ',' << r.metric << ','
                << cell(r.train, i == best_train) << ',' << cell(r.test, i == best_test) << ','
                << std::setprecision(6) << r.gap << (i == best_gap && rows.size() > 1 ? "*" : "") << '\n';
    }
    return kOk;
  }
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.variant.size() + 2);
  std::cout << std::left << std::setw(int(w)) << "variant" << std::setw(18) << "metric" << std::right
            << std::setw(10) << "train" << std::setw(10) << "test" << std::setw(12) << "gap(loss)" << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::ostringstream gap;
    gap << std::fixed << std::setprecision(4) << r.gap << (i == best_gap && rows.size() > 1 ? "*" : "");
    std::cout << std::left << std::setw(int(w)) << r.variant << std::setw(18) << r.metric << std::right
              << std::setw(10) << cell(r.train, i == best_train) << std::setw(10) << cell(r.test, i == best_test)
              << std::setw(12) << gap.str() << '\n';
  }
  std::cout << "(* best per column; metrics x100)\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthprobe: synthetic probe datasets, Lambda-layer probe training and audits"};
  app.require_subcommand(1, 1);
  Options o;
  const std::vector<std::string> args(argv + 1, argv + argc);

  auto* rde = app.add_subcommand("gen-rde", "generate relative-depth rectangle scenes");
  rde->add_option("--out", o.out, "output directory")->required();
  rde->add_option("--seed", o.seed, "dataset seed");
  rde->add_option("--count", o.count, "number of scenes");
  rde->add_option("--width", o.rde.width);
  rde->add_option("--height", o.rde.height);
  rde->add_option("--rects", o.rde.n_rects, "rectangles per scene");
  rde->add_option("--min-side", o.rde.min_side);
  rde->add_option("--max-side", o.rde.max_side);
  rde->add_option("--min-visible", o.rde.min_visible_frac, "minimum visible fraction per rect");
  rde->add_option("--max-retries", o.rde.max_retries, "scene sampling budget");
  rde->add_option("--palette-size", o.palette_size);
  rde->add_flag("--no-filter", o.no_filter, "skip the unambiguity filter (ambiguous variant)");

  auto* sq = app.add_subcommand("gen-square", "generate the centered-square dataset");
  sq->add_option("--out", o.out, "output directory")->required();
  sq->add_option("--H", o.square.height, "image height");
  sq->add_option("--W", o.square.width, "image width");
  sq->add_option("--w", o.square.side, "square side (odd)");

  auto* cc = app.add_subcommand("gen-colorcode", "generate color-code sequences");
  cc->add_option("--out", o.out, "output directory")->required();
  cc->add_option("--seed", o.seed, "dataset seed");
  cc->add_option("--n", o.cc.n, "sequence length");
  cc->add_option("--k", o.cc.k, "distinct colors per sequence");
  cc->add_option("--z", o.cc.z, "code vocabulary size");
  cc->add_option("--mask-frac", o.cc.mask_frac, "fraction of masked positions");
  cc->add_option("--min-color-dist", o.cc.min_color_dist);
  cc->add_option("--max-retries", o.cc.max_retries);
  cc->add_option("--train", o.cc_train, "train samples");
  cc->add_option("--test", o.cc_test, "test samples");
  cc->add_flag("--no-repair", o.no_repair)->group("");

  auto* ver = app.add_subcommand("verify", "audit every sample of a dataset");
  ver->add_option("--manifest", o.manifest, "dataset directory or manifest.jsonl")->required();
  ver->add_option("--out", o.out, "directory for run.json and verify.jsonl");

  auto* tr = app.add_subcommand("train", "run one experiment from a JSON config");
  tr->add_option("--config", o.config, "experiment config JSON")->required();
  tr->add_option("--out", o.out, "run directory")->required();
  tr->add_option("--seed", o.train_seed, "override the init/shuffle seed");
  tr->add_option("--data-seed", o.data_seed, "override the dataset seed");
  tr->add_option("--epochs", o.epochs, "override the epoch count");

  auto* ev = app.add_subcommand("eval", "evaluate saved weights on a dataset split");
  ev->add_option("--weights", o.weights, "weights.json")->required();
  ev->add_option("--manifest", o.manifest, "dataset directory or manifest.jsonl")->required();
  ev->add_option("--split", o.split);
  ev->add_option("--out", o.out);

  auto* eq = app.add_subcommand("equiv-check", "measure circular-shift equivariance");
  eq->add_option("--weights", o.weights, "probe weights (otherwise a random layer is built)");
  eq->add_option("--shifts", o.shifts, "all | random:K");
  eq->add_option("--tol", o.tol);
  eq->add_option("--seed", o.seed, "input and random-weight seed");
  eq->add_option("--encoding", o.encoding, "random layer encoding");
  eq->add_option("--geometry", o.geometry, "random layer geometry: seq:N or grid:HxW");
  eq->add_option("--hidden", o.hidden);
  eq->add_option("--m", o.m);
  eq->add_option("--c-pe", o.c_pe, "positional channels (default: N/2 on sequences, H on grids)");
  eq->add_option("--out", o.out);

  auto* rep = app.add_subcommand("report", "compare run directories");
  rep->add_option("--runs", o.runs, "run directories")->required()->expected(1, -1);
  rep->add_flag("--csv", o.csv);
  rep->add_option("--out", o.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*rde) return gen_rde(o, args);
    if (*sq) return gen_square(o, args);
    if (*cc) return gen_colorcode(o, args);
    if (*ver) return verify(o, args);
    if (*tr) return train_cmd(o, args);
    if (*ev) return eval_cmd(o, args);
    if (*eq) return equiv_check(o, args);
    if (*rep) return report_cmd(o, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const GenerationError& e) {
    std::cerr << "generation budget exhausted: " << e.what() << '\n';
    return kBudget;
  } catch (const MissingReport& e) {
    std::cerr << e.what() << '\n';
    return kBudget;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
