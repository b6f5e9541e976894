#pragma once

// Reverse-mode differentiation over BasicTensor. A tape records nodes in
// forward order; backward() walks them once in reverse. Leaves created with
// requires_grad=false are constants, and ops whose parents are all constants
// record no gradient rule, so the same forward code serves tracked and
// untracked evaluation.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synthprobe/errors.hpp"
#include "synthprobe/tensor.hpp"

namespace synthprobe {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename T>
Eigen::Map<RowMatrix<T>> as_matrix(BasicTensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<const RowMatrix<T>> as_matrix(const BasicTensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> as_array(BasicTensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.size())};
}

template <typename T>
Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> as_array(const BasicTensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.size())};
}

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(s));
}

}  // namespace detail

template <typename T>
class BasicTape;

/// Handle to a value recorded on a tape.
template <typename T>
class BasicVar {
 public:
  BasicVar() = default;

  [[nodiscard]] const BasicTensor<T>& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] BasicTape<T>* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }

 private:
  friend class BasicTape<T>;
  BasicVar(BasicTape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  BasicTape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  using Var = BasicVar<T>;
  using Backprop = std::function<void(BasicTape&, const TensorT& grad_out, const TensorT& out_value)>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var leaf(TensorT value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(TensorT value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backprop` is kept only if some parent needs gradients.
  Var record(const char* op, TensorT value, std::initializer_list<Var> parents, Backprop backprop) {
    if (!value.all_finite()) {
      throw NumericError(std::string(op) + ": non-finite value in output " + shape_str(value.shape()));
    }
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape_ != this) throw UsageError(std::string(op) + ": operand belongs to another tape");
      needs = needs || nodes_[p.id_].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backprop) : Backprop{}});
    return Var(this, nodes_.size() - 1);
  }

  /// Propagates d(loss)/d(node) to every node that requires it.
  void backward(const Var& loss) {
    if (loss.tape_ != this) throw UsageError("backward: value is not on this tape");
    if (nodes_[loss.id_].value.size() != 1) {
      throw UsageError("backward: loss must be scalar, got " + shape_str(nodes_[loss.id_].value.shape()));
    }
    for (Node& n : nodes_) n.grad = TensorT{};
    if (!nodes_[loss.id_].requires_grad) return;
    nodes_[loss.id_].grad = TensorT(nodes_[loss.id_].value.shape(), T{1});
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backprop && !n.grad.empty()) n.backprop(*this, n.grad, n.value);
    }
  }

  /// Gradient of the last backward() w.r.t. `v`; zeros if it was unreachable.
  [[nodiscard]] TensorT grad(const Var& v) const {
    const Node& n = nodes_.at(v.id_);
    return n.grad.empty() ? TensorT(n.value.shape()) : n.grad;
  }

  /// Accumulation buffer for a parent's gradient, allocated on first use.
  /// Returns nullptr when the node does not need a gradient.
  TensorT* grad_sink(const Var& v) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = TensorT(n.value.shape());
    return &n.grad;
  }

  [[nodiscard]] const TensorT& value(const Var& v) const { return nodes_.at(v.id_).value; }
  [[nodiscard]] bool requires_grad(const Var& v) const { return nodes_.at(v.id_).requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

template <typename T>
const BasicTensor<T>& BasicVar<T>::value() const {
  if (!tape_) throw UsageError("value() on an unbound variable");
  return tape_->value(*this);
}

template <typename T>
bool BasicVar<T>::requires_grad() const {
  return tape_ && tape_->requires_grad(*this);
}

using Tape = BasicTape<float>;
using Var = BasicVar<float>;

/// Runs backward on the loss's own tape.
template <typename T>
void backward(const BasicVar<T>& loss) {
  if (!loss.valid()) throw UsageError("backward: value is not on a tape");
  loss.tape()->backward(loss);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicVar<T> matmul(const BasicVar<T>& a, const BasicVar<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "matmul");
  detail::require_rank2(bv.shape(), "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  BasicTensor<T> out({av.rows(), bv.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return a.tape()->record("matmul", std::move(out), {a, b}, [a, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto G = detail::as_matrix(g);
    if (auto* ga = tape.grad_sink(a)) detail::as_matrix(*ga).noalias() += G * detail::as_matrix(b.value()).transpose();
    if (auto* gb = tape.grad_sink(b)) detail::as_matrix(*gb).noalias() += detail::as_matrix(a.value()).transpose() * G;
  });
}

/// a * b^T
template <typename T>
BasicVar<T> matmul_nt(const BasicVar<T>& a, const BasicVar<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "matmul_nt");
  detail::require_rank2(bv.shape(), "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ: " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()) + "^T");
  }
  BasicTensor<T> out({av.rows(), bv.rows()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv).transpose();
  return a.tape()->record("matmul_nt", std::move(out), {a, b}, [a, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto G = detail::as_matrix(g);
    if (auto* ga = tape.grad_sink(a)) detail::as_matrix(*ga).noalias() += G * detail::as_matrix(b.value());
    if (auto* gb = tape.grad_sink(b)) detail::as_matrix(*gb).noalias() += G.transpose() * detail::as_matrix(a.value());
  });
}

/// a^T * b
template <typename T>
BasicVar<T> matmul_tn(const BasicVar<T>& a, const BasicVar<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "matmul_tn");
  detail::require_rank2(bv.shape(), "matmul_tn");
  if (av.rows() != bv.rows()) {
    throw DimensionError("matmul_tn: inner dimensions differ: " + shape_str(av.shape()) + "^T x " +
                         shape_str(bv.shape()));
  }
  BasicTensor<T> out({av.cols(), bv.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av).transpose() * detail::as_matrix(bv);
  return a.tape()->record("matmul_tn", std::move(out), {a, b}, [a, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto G = detail::as_matrix(g);
    if (auto* ga = tape.grad_sink(a)) detail::as_matrix(*ga).noalias() += detail::as_matrix(b.value()) * G.transpose();
    if (auto* gb = tape.grad_sink(b)) detail::as_matrix(*gb).noalias() += detail::as_matrix(a.value()) * G;
  });
}

/// 1x1 convolution over positions: y[:, n] = w * x[:, n] + b.
template <typename T>
BasicVar<T> conv1x1(const BasicVar<T>& x, const BasicVar<T>& w, const BasicVar<T>& b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  detail::require_rank2(xv.shape(), "conv1x1");
  detail::require_rank2(wv.shape(), "conv1x1");
  if (wv.cols() != xv.rows() || bv.rank() != 1 || bv.size() != wv.rows()) {
    throw DimensionError("conv1x1: weight " + shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()) +
                         " incompatible with input " + shape_str(xv.shape()));
  }
  BasicTensor<T> out({wv.rows(), xv.cols()});
  auto Y = detail::as_matrix(out);
  Y.noalias() = detail::as_matrix(wv) * detail::as_matrix(xv);
  Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bv.raw(), bv.size());
  return x.tape()->record("conv1x1", std::move(out), {x, w, b}, [x, w, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    const auto G = detail::as_matrix(g);
    if (auto* gx = tape.grad_sink(x)) detail::as_matrix(*gx).noalias() += detail::as_matrix(w.value()).transpose() * G;
    if (auto* gw = tape.grad_sink(w)) detail::as_matrix(*gw).noalias() += G * detail::as_matrix(x.value()).transpose();
    if (auto* gb = tape.grad_sink(b)) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->raw(), gb->size()) += G.rowwise().sum();
    }
  });
}

/// Stacks two matrices with equal column counts: [a; b].
template <typename T>
BasicVar<T> concat_rows(const BasicVar<T>& a, const BasicVar<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_rank2(av.shape(), "concat_rows");
  detail::require_rank2(bv.shape(), "concat_rows");
  if (av.cols() != bv.cols()) {
    throw DimensionError("concat_rows: " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  BasicTensor<T> out({av.rows() + bv.rows(), av.cols()});
  std::copy(av.data().begin(), av.data().end(), out.data().begin());
  std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + av.size());
  const std::size_t split = av.size();
  return a.tape()->record("concat_rows", std::move(out), {a, b}, [a, b, split](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* ga = tape.grad_sink(a)) {
      for (std::size_t i = 0; i < split; ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = tape.grad_sink(b)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[split + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax along `axis` (0 or 1 for matrices, 0 for vectors), max-subtracted.
template <typename T>
BasicVar<T> softmax_axis(const BasicVar<T>& x, std::size_t axis) {
  const auto& xv = x.value();
  if (axis >= xv.rank()) {
    throw DimensionError("softmax_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(xv.shape()));
  }
  if (xv.rank() > 2) throw DimensionError("softmax_axis: rank > 2 unsupported: " + shape_str(xv.shape()));
  const std::size_t rows = xv.rank() == 1 ? 1 : xv.rows();
  const std::size_t cols = xv.rank() == 1 ? xv.size() : xv.cols();
  // Slices along `axis`: `count` slices of `len` elements spaced by `stride`.
  const bool along_cols = xv.rank() == 1 || axis == 1;
  const std::size_t count = along_cols ? rows : cols;
  const std::size_t len = along_cols ? cols : rows;
  const std::size_t step = along_cols ? 1 : cols;
  const std::size_t base_step = along_cols ? cols : 1;

  BasicTensor<T> out(xv.shape());
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t base = s * base_step;
    T mx = xv[base];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * step]);
    T total{0};
    for (std::size_t i = 0; i < len; ++i) {
      const T e = std::exp(xv[base + i * step] - mx);
      out[base + i * step] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * step] /= total;
  }
  return x.tape()->record("softmax_axis", std::move(out), {x},
                          [x, count, len, step, base_step](BasicTape<T>& tape, const BasicTensor<T>& g,
                                                           const BasicTensor<T>& y) {
                            auto* gx = tape.grad_sink(x);
                            if (!gx) return;
                            for (std::size_t s = 0; s < count; ++s) {
                              const std::size_t base = s * base_step;
                              T dot{0};
                              for (std::size_t i = 0; i < len; ++i) dot += g[base + i * step] * y[base + i * step];
                              for (std::size_t i = 0; i < len; ++i) {
                                (*gx)[base + i * step] += y[base + i * step] * (g[base + i * step] - dot);
                              }
                            }
                          });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename T>
void require_same_shape(const BasicVar<T>& a, const BasicVar<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

template <typename T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b) {
  detail::require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  detail::as_array(out) = detail::as_array(a.value()) + detail::as_array(b.value());
  return a.tape()->record("add", std::move(out), {a, b}, [a, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* ga = tape.grad_sink(a)) detail::as_array(*ga) += detail::as_array(g);
    if (auto* gb = tape.grad_sink(b)) detail::as_array(*gb) += detail::as_array(g);
  });
}

template <typename T>
BasicVar<T> sub(const BasicVar<T>& a, const BasicVar<T>& b) {
  detail::require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  detail::as_array(out) = detail::as_array(a.value()) - detail::as_array(b.value());
  return a.tape()->record("sub", std::move(out), {a, b}, [a, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* ga = tape.grad_sink(a)) detail::as_array(*ga) += detail::as_array(g);
    if (auto* gb = tape.grad_sink(b)) detail::as_array(*gb) -= detail::as_array(g);
  });
}

template <typename T>
BasicVar<T> mul(const BasicVar<T>& a, const BasicVar<T>& b) {
  detail::require_same_shape(a, b, "mul");
  BasicTensor<T> out(a.shape());
  detail::as_array(out) = detail::as_array(a.value()) * detail::as_array(b.value());
  return a.tape()->record("mul", std::move(out), {a, b}, [a, b](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* ga = tape.grad_sink(a)) detail::as_array(*ga) += detail::as_array(g) * detail::as_array(b.value());
    if (auto* gb = tape.grad_sink(b)) detail::as_array(*gb) += detail::as_array(g) * detail::as_array(a.value());
  });
}

template <typename T>
BasicVar<T> scale(const BasicVar<T>& x, T factor) {
  BasicTensor<T> out(x.shape());
  detail::as_array(out) = detail::as_array(x.value()) * factor;
  return x.tape()->record("scale", std::move(out), {x}, [x, factor](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* gx = tape.grad_sink(x)) detail::as_array(*gx) += detail::as_array(g) * factor;
  });
}

template <typename T>
BasicVar<T> relu(const BasicVar<T>& x) {
  BasicTensor<T> out(x.shape());
  detail::as_array(out) = detail::as_array(x.value()).max(T{0});
  return x.tape()->record("relu", std::move(out), {x}, [x](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* gx = tape.grad_sink(x)) {
      detail::as_array(*gx) += (detail::as_array(x.value()) > T{0}).select(detail::as_array(g), T{0});
    }
  });
}

template <typename T>
T sigmoid_scalar(T z) {
  return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

template <typename T>
BasicVar<T> sigmoid(const BasicVar<T>& x) {
  BasicTensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sigmoid_scalar(xv[i]);
  return x.tape()->record("sigmoid", std::move(out), {x}, [x](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* gx = tape.grad_sink(x)) {
      const auto& xv = x.value();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const T s = sigmoid_scalar(xv[i]);
        (*gx)[i] += g[i] * s * (T{1} - s);
      }
    }
  });
}

/// Sum of all elements, as a scalar.
template <typename T>
BasicVar<T> sum(const BasicVar<T>& x) {
  BasicTensor<T> out(Shape{});
  out[0] = detail::as_array(x.value()).sum();
  return x.tape()->record("sum", std::move(out), {x}, [x](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* gx = tape.grad_sink(x)) detail::as_array(*gx) += g[0];
  });
}

// ---------------------------------------------------------------------------
// Losses (mean-reduced scalars; targets are constants)

template <typename T>
BasicVar<T> mse_loss(const BasicVar<T>& pred, const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const T n = static_cast<T>(target.size());
  BasicTensor<T> out(Shape{});
  out[0] = (detail::as_array(pred.value()) - detail::as_array(target)).square().sum() / n;
  return pred.tape()->record("mse_loss", std::move(out), {pred}, [pred, target, n](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
    if (auto* gp = tape.grad_sink(pred)) {
      detail::as_array(*gp) += (detail::as_array(pred.value()) - detail::as_array(target)) * (T{2} * g[0] / n);
    }
  });
}

template <typename T>
BasicVar<T> bce_with_logits_loss(const BasicVar<T>& logits, const BasicTensor<T>& target) {
  if (logits.shape() != target.shape()) {
    throw DimensionError("bce_with_logits_loss: " + shape_str(logits.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto& z = logits.value();
  const T n = static_cast<T>(target.size());
  T total{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += std::max(z[i], T{0}) - z[i] * target[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  BasicTensor<T> out(Shape{});
  out[0] = total / n;
  return logits.tape()->record("bce_with_logits_loss", std::move(out), {logits},
                               [logits, target, n](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
                                 if (auto* gz = tape.grad_sink(logits)) {
                                   const auto& z = logits.value();
                                   const T s = g[0] / n;
                                   for (std::size_t i = 0; i < z.size(); ++i) {
                                     (*gz)[i] += (sigmoid_scalar(z[i]) - target[i]) * s;
                                   }
                                 }
                               });
}

/// Cross-entropy over classes on axis 0 of a [classes x positions] logit map,
/// averaged over positions. `target[n]` is the class index at position n.
template <typename T>
BasicVar<T> softmax_cross_entropy_loss(const BasicVar<T>& logits, std::span<const std::uint16_t> target) {
  const auto& z = logits.value();
  detail::require_rank2(z.shape(), "softmax_cross_entropy_loss");
  const std::size_t classes = z.rows();
  const std::size_t positions = z.cols();
  if (target.size() != positions) {
    throw DimensionError("softmax_cross_entropy_loss: " + std::to_string(target.size()) + " targets for logits " +
                         shape_str(z.shape()));
  }
  for (std::size_t n = 0; n < positions; ++n) {
    if (target[n] >= classes) {
      throw DataError("softmax_cross_entropy_loss: class index " + std::to_string(target[n]) + " at position " +
                      std::to_string(n) + " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  BasicTensor<T> probs(z.shape());
  T total{0};
  for (std::size_t n = 0; n < positions; ++n) {
    T mx = z(0, n);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z(c, n));
    T s{0};
    for (std::size_t c = 0; c < classes; ++c) {
      probs(c, n) = std::exp(z(c, n) - mx);
      s += probs(c, n);
    }
    for (std::size_t c = 0; c < classes; ++c) probs(c, n) /= s;
    total += std::log(s) + mx - z(target[n], n);
  }
  BasicTensor<T> out(Shape{});
  out[0] = total / static_cast<T>(positions);
  std::vector<std::uint16_t> tgt(target.begin(), target.end());
  return logits.tape()->record(
      "softmax_cross_entropy_loss", std::move(out), {logits},
      [logits, probs = std::move(probs), tgt = std::move(tgt), positions](BasicTape<T>& tape, const BasicTensor<T>& g, const BasicTensor<T>&) {
        if (auto* gz = tape.grad_sink(logits)) {
          const T s = g[0] / static_cast<T>(positions);
          detail::as_array(*gz) += detail::as_array(probs) * s;
          for (std::size_t n = 0; n < positions; ++n) (*gz)(tgt[n], n) -= s;
        }
      });
}

}  // namespace synthprobe
