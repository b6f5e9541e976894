// Generates a few RDE scenes, audits them, then trains a small color-code
// probe for a handful of epochs and prints its report.
//
//   ./quickstart [out_dir]

#include <iostream>

#include "synthprobe/trainer.hpp"

using namespace synthprobe;

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? argv[1] : "quickstart_out";

  RdeConfig rde;
  const auto gen = generate_rde_dataset(out / "rde", rde, 7, 8);
  const auto m = read_manifest(out / "rde");
  std::size_t ok = 0;
  for (const auto& r : m.records) ok += verify_sample(m, r).ok;
  std::cout << "rde: " << m.records.size() << " scenes in " << gen.attempts << " attempts, " << ok << " verified\n";

  const auto cfg = experiment_config_from({{"experiment", "color_code"},
                                           {"variant", "lambda"},
                                           {"dataset", {{"n", 32}, {"k", 4}, {"z", 8}, {"train", 400}, {"test", 200}}},
                                           {"net", {{"hidden", 32}, {"m", 32}, {"activation", "silu"}, {"residual", true}}},
                                           {"train", {{"epochs", 10}, {"learning_rate", 0.003}, {"eval_every", 2}}}});
  const auto res = run_experiment(cfg, out / "colorcode", [](const EpochLog& l) {
    std::cout << "epoch " << l.epoch << " loss " << l.train_loss;
    if (l.eval_metric) std::cout << " test masked_accuracy " << *l.eval_metric;
    std::cout << '\n';
  });
  std::cout << "color code: " << res.parameters << " parameters, train " << res.train_report.at("masked_accuracy")
            << ", test " << res.test_report.at("masked_accuracy") << "\nartifacts in " << out << '\n';
}
