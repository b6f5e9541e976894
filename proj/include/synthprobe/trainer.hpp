#pragma once

// Probe networks (1x1 conv stem -> Lambda layer(s) -> 1x1 conv head), Adam
// training over manifest-backed datasets, evaluation and experiment runs.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthprobe/autodiff.hpp"
#include "synthprobe/dataset_io.hpp"
#include "synthprobe/lambda_layer.hpp"
#include "synthprobe/metrics.hpp"
#include "synthprobe/tensor_io.hpp"

namespace synthprobe {

enum class Task { centered_square, color_code };

inline std::string to_string(Task t) { return t == Task::centered_square ? "centered_square" : "color_code"; }

inline Task parse_task(const std::string& s) {
  if (s == "centered_square") return Task::centered_square;
  if (s == "color_code") return Task::color_code;
  throw ConfigError("unknown task '" + s + "' (expected centered_square or color_code)");
}

// ---------------------------------------------------------------------------
// Network specification

/// Pointwise nonlinearity after the stem and after each Lambda layer.
enum class Activation { none, relu, silu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    default: return "none";
  }
}

inline Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + s + "' (expected none, relu or silu)");
}

struct NetSpec {
  Task task = Task::centered_square;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t hidden = 64;
  std::size_t layers = 1;
  std::size_t m = 64;
  std::size_t c_pe = 64;
  Encoding encoding = Encoding::fourier_decor;
  bool tt = false;
  Activation activation = Activation::none;
  bool residual = false;  // h <- h + f(lambda(h)) instead of f(lambda(h))
  Geometry geometry = Geometry::grid(64, 64);

  [[nodiscard]] LambdaConfig layer_config() const {
    return {hidden, hidden, m, uses_sinusoids(encoding) ? c_pe : 0, encoding, tt, geometry};
  }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || hidden == 0 || layers == 0) {
      throw ConfigError("net: channel counts and layer count must be positive");
    }
    if (task == Task::centered_square && (in_channels != 1 || out_channels != 1 || !geometry.is_grid())) {
      throw ConfigError("net: centered_square maps one input channel to one logit channel on a grid");
    }
    if (task == Task::color_code && (in_channels < 4 || out_channels != in_channels - 3)) {
      throw ConfigError("net: color_code needs 3 + Z input channels and Z output channels");
    }
    layer_config().validate();
  }
};

inline json to_json(const NetSpec& s) {
  return {{"task", to_string(s.task)},
          {"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"hidden", s.hidden},
          {"layers", s.layers},
          {"m", s.m},
          {"c_pe", s.c_pe},
          {"encoding", std::string(to_string(s.encoding))},
          {"tt", s.tt},
          {"activation", to_string(s.activation)},
          {"residual", s.residual},
          {"geometry",
           {{"kind", s.geometry.is_grid() ? "grid" : "seq"}, {"height", s.geometry.height}, {"width", s.geometry.width}}}};
}

inline NetSpec net_spec_from(const json& j) {
  NetSpec s;
  s.task = parse_task(j.at("task").get<std::string>());
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.out_channels = j.at("out_channels").get<std::size_t>();
  s.hidden = j.value("hidden", s.hidden);
  s.layers = j.value("layers", s.layers);
  s.m = j.value("m", s.m);
  s.c_pe = j.value("c_pe", s.c_pe);
  s.encoding = parse_encoding(j.value("encoding", std::string("none")));
  s.tt = j.value("tt", false);
  s.activation = parse_activation(j.value("activation", std::string("none")));
  s.residual = j.value("residual", false);
  const auto& g = j.at("geometry");
  const std::string kind = g.at("kind").get<std::string>();
  if (kind == "grid") {
    s.geometry = Geometry::grid(g.at("height").get<std::size_t>(), g.at("width").get<std::size_t>());
  } else if (kind == "seq") {
    s.geometry = Geometry::seq(g.at("width").get<std::size_t>());
  } else {
    throw ConfigError("net: geometry kind must be grid or seq");
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename T>
struct ProbeWeights {
  BasicTensor<T> stem_w, stem_b;  // hidden x in, hidden
  std::vector<LambdaWeights<T>> body;
  BasicTensor<T> head_w, head_b;  // out x hidden, out

  /// All parameters in a fixed order with stable names.
  std::vector<std::pair<std::string, BasicTensor<T>*>> named() {
    std::vector<std::pair<std::string, BasicTensor<T>*>> out = {{"stem.w", &stem_w}, {"stem.b", &stem_b}};
    for (std::size_t l = 0; l < body.size(); ++l)
      for (auto& [name, t] : body[l].named()) out.emplace_back("body" + std::to_string(l) + "." + name, t);
    out.emplace_back("head.w", &head_w);
    out.emplace_back("head.b", &head_b);
    return out;
  }

  std::vector<std::pair<std::string, const BasicTensor<T>*>> named() const {
    std::vector<std::pair<std::string, const BasicTensor<T>*>> out;
    for (auto& [n, t] : const_cast<ProbeWeights*>(this)->named()) out.emplace_back(n, t);
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->size();
    return n;
  }
};

template <typename T = float>
struct ProbeNet {
  NetSpec spec;
  ProbeWeights<T> weights;
  std::vector<LambdaContext<T>> contexts;  // one per body layer

  ProbeNet(NetSpec s, ProbeWeights<T> w) : spec(std::move(s)), weights(std::move(w)) {
    spec.validate();
    if (weights.body.size() != spec.layers) throw DimensionError("net: body layer count differs from spec");
    for (std::size_t l = 0; l < spec.layers; ++l) {
      contexts.emplace_back(spec.layer_config());
      check_lambda_weights(weights.body[l], spec.layer_config());
    }
    auto expect = [](const BasicTensor<T>& t, const Shape& s, const char* name) {
      if (t.shape() != s) throw DimensionError(std::string("net: ") + name + " should be " + shape_str(s) + ", got " + shape_str(t.shape()));
    };
    expect(weights.stem_w, {spec.hidden, spec.in_channels}, "stem.w");
    expect(weights.stem_b, {spec.hidden}, "stem.b");
    expect(weights.head_w, {spec.out_channels, spec.hidden}, "head.w");
    expect(weights.head_b, {spec.out_channels}, "head.b");
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
template <typename T = float>
ProbeNet<T> init_params(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  auto draw = [&](std::size_t rows, std::size_t cols) {
    BasicTensor<T> t({rows, cols});
    const double b = 1.0 / std::sqrt(double(cols));
    std::uniform_real_distribution<double> u(-b, b);
    for (auto& v : t.data()) v = T(u(rng));
    return t;
  };
  ProbeWeights<T> w;
  w.stem_w = draw(spec.hidden, spec.in_channels);
  w.stem_b = BasicTensor<T>({spec.hidden});
  for (std::size_t l = 0; l < spec.layers; ++l) w.body.push_back(init_lambda_weights<T>(spec.layer_config(), rng));
  w.head_w = draw(spec.out_channels, spec.hidden);
  w.head_b = BasicTensor<T>({spec.out_channels});
  return ProbeNet<T>(spec, std::move(w));
}

template <typename T>
struct ProbeVars {
  BasicVar<T> stem_w, stem_b, head_w, head_b;
  std::vector<LambdaParams<T>> body;
  std::vector<BasicVar<T>> all;  // same order as ProbeWeights::named()
};

/// Distributes leaves (in ProbeWeights::named() order) over the net structure.
template <typename T>
ProbeVars<T> probe_vars_from(const ProbeWeights<T>& w, std::vector<BasicVar<T>> leaves) {
  ProbeVars<T> v;
  std::size_t i = 0;
  auto next = [&]() -> BasicVar<T> {
    if (i >= leaves.size()) throw DimensionError("probe: too few parameter handles");
    return leaves[i++];
  };
  v.stem_w = next();
  v.stem_b = next();
  for (const auto& lw : w.body) {
    LambdaParams<T> p;
    for (auto [t, var] : {std::pair{&lw.k, &p.k}, {&lw.v, &p.v}, {&lw.q, &p.q}, {&lw.a, &p.a}, {&lw.k2, &p.k2},
                          {&lw.v2, &p.v2}, {&lw.pe_proj, &p.pe_proj}}) {
      if (!t->empty()) *var = next();
    }
    v.body.push_back(p);
  }
  v.head_w = next();
  v.head_b = next();
  if (i != leaves.size()) throw DimensionError("probe: too many parameter handles");
  v.all = std::move(leaves);
  return v;
}

template <typename T>
ProbeVars<T> bind_probe(BasicTape<T>& tape, const ProbeWeights<T>& w, bool requires_grad) {
  std::vector<BasicVar<T>> leaves;
  for (const auto& [name, t] : w.named()) leaves.push_back(tape.leaf(*t, requires_grad));
  return probe_vars_from(w, std::move(leaves));
}

/// Logits (out_channels x positions) on the tape owning `x`.
template <typename T>
BasicVar<T> probe_forward(const ProbeNet<T>& net, const ProbeVars<T>& p, const BasicVar<T>& x) {
  auto act = [&](BasicVar<T> v) {
    switch (net.spec.activation) {
      case Activation::relu: return relu(v);
      case Activation::silu: return mul(v, sigmoid(v));
      default: return v;
    }
  };
  BasicVar<T> h = act(conv1x1(x, p.stem_w, p.stem_b));
  for (std::size_t l = 0; l < net.spec.layers; ++l) {
    BasicVar<T> z = act(lambda_forward(h, p.body[l], net.contexts[l]));
    h = net.spec.residual ? add(h, z) : z;
  }
  return conv1x1(h, p.head_w, p.head_b);
}

/// Untracked logits for one input.
template <typename T>
BasicTensor<T> probe_logits(const ProbeNet<T>& net, const BasicTensor<T>& x) {
  BasicTape<T> tape;
  auto p = bind_probe(tape, net.weights, false);
  return probe_forward(net, p, tape.constant(x)).value();
}

/// Per-sample task loss: BCE with logits on the square map, softmax CE over all positions for codes.
template <typename T>
BasicVar<T> task_loss(Task task, const BasicVar<T>& logits, const BasicTensor<T>& target_map,
                      std::span<const std::uint16_t> classes) {
  return task == Task::centered_square ? bce_with_logits_loss(logits, target_map)
                                       : softmax_cross_entropy_loss(logits, classes);
}

// ---------------------------------------------------------------------------
// Weights files: JSON header + one flat f32 SYNT payload

inline void save_weights(const fs::path& header_path, const ProbeNet<float>& net) {
  json params = json::array();
  std::vector<float> flat;
  for (const auto& [name, t] : net.weights.named()) {
    params.push_back({{"name", name}, {"shape", t->shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), t->data().begin(), t->data().end());
  }
  fs::path payload = header_path;
  payload.replace_extension(".synt");
  fs::create_directories(header_path.parent_path().empty() ? fs::path(".") : header_path.parent_path());
  write_synt<float>(payload, Shape{flat.size()}, flat);
  json header = {{"format", "synthprobe-weights"},
                 {"version", 1},
                 {"net", to_json(net.spec)},
                 {"lambda", {{"c_in", net.spec.hidden}, {"c_out", net.spec.hidden}, {"m", net.spec.m},
                             {"c_pe", net.spec.layer_config().c_pe}, {"encoding", std::string(to_string(net.spec.encoding))},
                             {"tt", net.spec.tt}}},
                 {"payload", payload.filename().string()},
                 {"params", params}};
  std::ofstream out(header_path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + header_path.string());
  out << header.dump(2) << '\n';
}

inline ProbeNet<float> load_weights(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw DataError("cannot open weights header " + header_path.string());
  json header;
  try {
    header = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(header_path.string() + ": " + e.what());
  }
  if (header.value("format", "") != "synthprobe-weights") throw DataError(header_path.string() + ": not a weights header");
  const NetSpec spec = net_spec_from(header.at("net"));
  ProbeNet<float> net = init_params<float>(spec, 0);
  const auto payload = read_synt(header_path.parent_path() / header.at("payload").get<std::string>());
  if (payload.dtype() != Dtype::f32 || payload.shape.size() != 1) throw DataError("weights payload must be flat f32");
  const auto& flat = std::get<std::vector<float>>(payload.values);
  auto slots = net.weights.named();
  const auto& params = header.at("params");
  if (params.size() != slots.size()) throw DataError("weights header lists " + std::to_string(params.size()) + " parameters, net needs " + std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& p = params[i];
    const auto shape = p.at("shape").get<Shape>();
    const auto offset = p.at("offset").get<std::size_t>();
    if (p.at("name").get<std::string>() != slots[i].first || shape != slots[i].second->shape()) {
      throw DataError("weights parameter " + std::to_string(i) + " does not match the net spec (" + slots[i].first + ")");
    }
    if (offset + shape_numel(shape) > flat.size()) throw DataError("weights payload too short for " + slots[i].first);
    std::copy_n(flat.begin() + std::ptrdiff_t(offset), shape_numel(shape), slots[i].second->data().begin());
  }
  return ProbeNet<float>(spec, net.weights);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::uint64_t seed = 1;  // init and shuffle
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t eval_every = 0;  // epochs between held-out evaluations, 0 = never

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ConfigError("train: epochs and batch_size must be positive");
    if (learning_rate < 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || eps <= 0) {
      throw ConfigError("train: invalid optimizer hyperparameters");
    }
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"seed", c.seed},           {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"eps", c.eps},             {"eval_every", c.eval_every}};
}

inline TrainConfig train_config_from(const json& j) {
  TrainConfig c;
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.validate();
  return c;
}

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(const TrainConfig& cfg, const std::vector<std::pair<std::string, BasicTensor<float>*>>& params) : cfg_(cfg) {
    for (const auto& [name, t] : params) {
      m_.emplace_back(t->shape());
      v_.emplace_back(t->shape());
    }
  }

  void step(const std::vector<std::pair<std::string, BasicTensor<float>*>>& params, const std::vector<Tensor>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& w = *params[i].second;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = grads[i][j];
        m_[i][j] = float(cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g);
        v_[i][j] = float(cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g);
        const double mhat = m_[i][j] / c1, vhat = v_[i][j] / c2;
        w[j] = float(w[j] - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean over the epoch's batches
  std::optional<double> eval_metric;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> history;
};

inline double task_metric(Task task, const Tensor& logits, const Example& e) {
  if (task == Task::centered_square) {
    std::vector<std::uint8_t> pred(logits.size()), gt(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) pred[i] = logits[i] > 0.f, gt[i] = e.target[i] > 0.5f;
    return iou(pred, gt);
  }
  std::vector<std::uint16_t> codes(logits.cols());
  for (std::size_t n = 0; n < logits.cols(); ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.rows(); ++c)
      if (logits(c, n) > logits(best, n)) best = c;
    codes[n] = std::uint16_t(best);
  }
  return masked_accuracy(codes, e.classes, e.given);
}

inline std::string metric_name(Task task) { return task == Task::centered_square ? "iou" : "masked_accuracy"; }

/// Mean task metric (IOU after sigmoid > 0.5, or masked code accuracy after argmax) and mean loss.
inline EvalReport evaluate(const ProbeNet<float>& net, const std::vector<Example>& data, const std::string& split) {
  if (data.empty()) throw DataError("evaluate: split '" + split + "' is empty");
  double metric = 0, loss = 0;
  for (const auto& e : data) {
    Tape tape;
    auto p = bind_probe(tape, net.weights, false);
    auto logits = probe_forward(net, p, tape.constant(e.input));
    loss += task_loss(net.spec.task, logits, e.target, e.classes).value()[0];
    metric += task_metric(net.spec.task, logits.value(), e);
  }
  EvalReport r;
  r.split = split;
  r.samples = data.size();
  r.set(metric_name(net.spec.task), metric / double(data.size()));
  r.set("loss", loss / double(data.size()));
  return r;
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch Adam. Per-sample tapes; gradients averaged over the batch.
inline TrainResult train(ProbeNet<float>& net, const std::vector<Example>& data, const TrainConfig& cfg,
                         const std::vector<Example>* eval_data = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("train: the train split is empty");
  auto params = net.weights.named();
  Adam adam(cfg, params);
  std::mt19937_64 shuffle_rng(mix64(cfg.seed ^ 0x5348554646ull));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> grads;
      for (const auto& [name, t] : params) grads.emplace_back(t->shape());
      double batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) {
        const Example& e = data[order[i]];
        const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
        Tape tape;
        auto p = bind_probe(tape, net.weights, true);
        std::optional<Var> loss;
        try {
          loss = task_loss(net.spec.task, probe_forward(net, p, tape.constant(e.input)), e.target, e.classes);
        } catch (const NumericError& err) {
          throw NumericError("train: non-finite loss at " + where + " (sample " + e.id + "): " + err.what());
        }
        const double lv = loss->value()[0];
        if (!std::isfinite(lv)) throw NumericError("train: non-finite loss at " + where);
        batch_loss += lv;
        tape.backward(*loss);
        for (std::size_t k = 0; k < params.size(); ++k) {
          const Tensor g = tape.grad(p.all[k]);
          detail::as_array(grads[k]) += detail::as_array(g);
        }
      }
      const float inv = 1.f / float(end - start);
      for (auto& g : grads) detail::as_array(g) *= inv;
      adam.step(params, grads);
      for (const auto& [name, t] : params) {
        if (!t->all_finite()) {
          throw NumericError("train: non-finite parameter " + name + " after epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(b));
        }
      }
      epoch_loss += batch_loss / double(end - start);
      ++batches;
    }
    EpochLog log{epoch, epoch_loss / double(batches), std::nullopt, 0};
    if (eval_data && cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      log.eval_metric = evaluate(net, *eval_data, "eval").at(metric_name(net.spec.task));
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

inline void write_loss_history(const fs::path& path, const TrainResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,eval_metric,seconds\n";
  out << std::setprecision(9);
  for (const auto& e : r.history) {
    out << e.epoch << ',' << e.train_loss << ',';
    if (e.eval_metric) out << *e.eval_metric;
    out << ',' << e.seconds << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  std::string experiment;  // centered_square | color_code
  std::string variant;     // an encoding name, or lambda | lambda_tt
  std::uint64_t data_seed = 1;
  json dataset;            // generator config (+ train/test counts for color codes)
  NetSpec net;
  TrainConfig train;
};

/// Builds the config for an experiment/variant; `overrides` replaces any of the
/// "dataset", "net" and "train" fields.
inline ExperimentConfig experiment_config_from(const json& j) {
  ExperimentConfig c;
  c.experiment = j.at("experiment").get<std::string>();
  c.variant = j.at("variant").get<std::string>();
  c.data_seed = j.value("data_seed", std::uint64_t{1});
  const json net = j.value("net", json::object());
  c.train = train_config_from(j.value("train", json::object()));
  NetSpec s;
  s.hidden = net.value("hidden", s.hidden);
  s.m = net.value("m", s.m);
  s.c_pe = net.value("c_pe", s.c_pe);
  s.activation = parse_activation(net.value("activation", std::string("none")));
  s.residual = net.value("residual", false);
  if (c.experiment == "centered_square") {
    const SquareConfig sq = square_config_from(j.value("dataset", json::object()));
    c.dataset = to_json(sq);
    s.task = Task::centered_square;
    s.in_channels = s.out_channels = 1;
    s.layers = net.value("layers", std::size_t{1});
    s.encoding = parse_encoding(c.variant);
    s.tt = false;
    s.geometry = Geometry::grid(sq.height, sq.width);
  } else if (c.experiment == "color_code") {
    const json d = j.value("dataset", json::object());
    const ColorCodeConfig cc = colorcode_config_from(d);
    c.dataset = to_json(cc);
    c.dataset["train"] = d.value("train", std::size_t{5000});
    c.dataset["test"] = d.value("test", std::size_t{2000});
    s.task = Task::color_code;
    s.in_channels = 3 + cc.z;
    s.out_channels = cc.z;
    s.layers = net.value("layers", std::size_t{3});
    s.encoding = parse_encoding(net.value("encoding", std::string("none")));
    if (c.variant != "lambda" && c.variant != "lambda_tt") {
      throw ConfigError("color_code variant must be lambda or lambda_tt, got '" + c.variant + "'");
    }
    s.tt = c.variant == "lambda_tt";
    s.geometry = Geometry::seq(cc.n);
  } else {
    throw ConfigError("unknown experiment '" + c.experiment + "'");
  }
  s.validate();
  c.net = s;
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  json net = to_json(c.net);
  return {{"experiment", c.experiment}, {"variant", c.variant}, {"data_seed", c.data_seed},
          {"dataset", c.dataset},       {"net", net},           {"train", to_json(c.train)}};
}

struct ExperimentResult {
  EvalReport train_report;
  EvalReport test_report;
  TrainResult history;
  std::size_t parameters = 0;
};

/// Generates the dataset under out_dir/data, trains, evaluates both splits and
/// writes report.json, weights.json/.synt and loss_history.csv into out_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                       const EpochCallback& on_epoch = {}) {
  fs::create_directories(out_dir);
  const fs::path data_dir = out_dir / "data";
  if (cfg.net.task == Task::centered_square) {
    generate_square_dataset(data_dir, square_config_from(cfg.dataset));
  } else {
    generate_colorcode_dataset(data_dir, colorcode_config_from(cfg.dataset), cfg.data_seed,
                               cfg.dataset.at("train").get<std::size_t>(), cfg.dataset.at("test").get<std::size_t>());
  }
  const DatasetManifest manifest = read_manifest(data_dir);
  const auto train_set = load_split(manifest, "train");
  const auto test_set = load_split(manifest, "test");

  ProbeNet<float> net = init_params<float>(cfg.net, cfg.train.seed);
  ExperimentResult res;
  res.parameters = net.weights.parameter_count();
  res.history = train(net, train_set, cfg.train, &test_set, on_epoch);
  res.train_report = evaluate(net, train_set, "train");
  res.test_report = evaluate(net, test_set, "test");

  save_weights(out_dir / "weights.json", net);
  write_loss_history(out_dir / "loss_history.csv", res.history);
  const std::string metric = metric_name(cfg.net.task);
  json report = {{"experiment", cfg.experiment},
                 {"variant", cfg.variant},
                 {"config", to_json(cfg)},
                 {"parameters", res.parameters},
                 {"metric", metric},
                 {"train", res.train_report},
                 {"test", res.test_report},
                 {"generalization_gap", generalization_gap(res.test_report.at("loss"), res.train_report.at("loss"))},
                 {"metric_gap", res.train_report.at(metric) - res.test_report.at(metric)},
                 {"manifest", (data_dir / "manifest.jsonl").string()}};
  std::ofstream out(out_dir / "report.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (out_dir / "report.json").string());
  out << report.dump(2) << '\n';
  return res;
}

}  // namespace synthprobe
