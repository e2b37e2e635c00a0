#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records nodes in creation order, so every node's inputs precede it.
// Each node keeps a forward closure (used both when recording and when the
// tape is replayed through evaluate()) and a backward closure that
// accumulates into its inputs' gradients. Elementwise binary ops broadcast
// 1-sized dimensions, and their gradients are summed back to input shape.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "axs/errors.hpp"
#include "axs/spectral_core.hpp"

namespace axs::ad {

using Index = Eigen::Index;

/// A trainable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())), trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
};

using Inputs = std::span<const Matrix* const>;
using ForwardFn = std::function<void(Inputs in, Matrix& out)>;
// gin[k] is null when input k does not need a gradient.
using BackwardFn = std::function<void(Inputs in, const Matrix& out, const Matrix& gout, std::span<Matrix* const> gin)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose value can be replaced by evaluate().
  Var input(Matrix v, bool requires_grad = false) {
    auto id = push_leaf(std::move(v), requires_grad, nullptr);
    input_ids_.push_back(id);
    return {this, id};
  }

  Var constant(Matrix v) { return {this, push_leaf(std::move(v), false, nullptr)}; }

  Var constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Leaf bound to a Parameter; backward() accumulates into p.grad when trainable.
  /// The leaf reads p.value in place, so later changes to p are seen by evaluate().
  Var parameter(Parameter& p) { return {this, push_leaf(Matrix(), p.trainable, &p)}; }

  Var record(std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
    Node n;
    n.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.tape != this) throw Error("variable belongs to a different tape");
      n.inputs.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    run_forward(nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).val(); }

  /// Gradient of the last backward() output with respect to v (zeros if v had none).
  Matrix grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(n.val().rows(), n.val().cols());
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t n_inputs() const noexcept { return input_ids_.size(); }

  /// Replays the recorded graph with new input values (in input() order) and
  /// returns the values of `outputs`. Parameter leaves are refreshed from
  /// their Parameter objects.
  std::vector<Matrix> evaluate(std::span<const Matrix> inputs, std::span<const Var> outputs) {
    if (inputs.size() != input_ids_.size()) {
      throw ShapeError("evaluate: expected " + std::to_string(input_ids_.size()) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto& leaf = nodes_[input_ids_[k]];
      if (inputs[k].rows() != leaf.value.rows() || inputs[k].cols() != leaf.value.cols()) {
        throw ShapeError("evaluate: input " + std::to_string(k) + " has shape " + shape_str(inputs[k]) +
                         ", graph expects " + shape_str(leaf.value));
      }
      leaf.value = inputs[k];
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (n.forward) run_forward(i);
    }
    std::vector<Matrix> out;
    out.reserve(outputs.size());
    for (const auto& v : outputs) out.push_back(value(v));
    return out;
  }

  /// Accumulates d(output)/d(parameter) into every trainable Parameter on this tape.
  void backward(Var output) {
    auto& root = nodes_.at(output.id);
    if (root.val().rows() != 1 || root.val().cols() != 1) {
      throw ShapeError("backward requires a scalar output, got " + shape_str(root.val()));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    root.grad = Matrix::Ones(1, 1);
    std::vector<const Matrix*> in;
    std::vector<Matrix*> gin;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0 || !n.needs_grad) continue;
      if (n.backward) {
        in.clear();
        gin.clear();
        for (auto j : n.inputs) {
          auto& src = nodes_[j];
          in.push_back(&src.val());
          if (src.needs_grad) {
            if (src.grad.size() == 0) src.grad = Matrix::Zero(src.val().rows(), src.val().cols());
            gin.push_back(&src.grad);
          } else {
            gin.push_back(nullptr);
          }
        }
        n.backward(in, n.value, n.grad, gin);
      } else if (n.param != nullptr && n.param->trainable) {
        n.param->grad += n.grad;
      }
    }
  }

  static std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;

    const Matrix& val() const { return param != nullptr ? param->value : value; }
  };

  std::size_t push_leaf(Matrix v, bool needs_grad, Parameter* p) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    n.param = p;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void run_forward(std::size_t i) {
    auto& n = nodes_[i];
    scratch_.clear();
    for (auto j : n.inputs) scratch_.push_back(&nodes_[j].val());
    n.forward(scratch_, n.value);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> input_ids_;
  std::vector<const Matrix*> scratch_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

inline double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on non-scalar " + Tape::shape_str(v));
  return v(0, 0);
}

namespace detail {

inline Index broadcast_dim(Index a, Index b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast dimensions " + std::to_string(a) + " and " +
                   std::to_string(b));
}

inline Matrix broadcast(const Matrix& m, Index r, Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  if (m.size() == 1) return Matrix::Constant(r, c, m(0, 0));
  if (m.rows() == 1) return m.replicate(r, 1);
  return m.replicate(1, c);
}

inline void accumulate_reduced(Matrix& target, const Matrix& g) {
  if (target.rows() == g.rows() && target.cols() == g.cols()) {
    target += g;
  } else if (target.size() == 1) {
    target(0, 0) += g.sum();
  } else if (target.rows() == 1) {
    target += g.colwise().sum();
  } else {
    target += g.rowwise().sum();
  }
}

template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  return x.tape->record(
      {x}, [f](Inputs in, Matrix& out) { out = in[0]->unaryExpr(f); },
      [df](Inputs in, const Matrix& out, const Matrix& gout, std::span<Matrix* const> gin) {
        if (gin[0]) *gin[0] += gout.cwiseProduct(in[0]->binaryExpr(out, df));
      });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace detail

// ---- elementwise binary ops (broadcasting) ----

inline Var add(Var a, Var b) {
  return a.tape->record(
      {a, b},
      [](Inputs in, Matrix& out) {
        Index r = detail::broadcast_dim(in[0]->rows(), in[1]->rows(), "add");
        Index c = detail::broadcast_dim(in[0]->cols(), in[1]->cols(), "add");
        out = detail::broadcast(*in[0], r, c) + detail::broadcast(*in[1], r, c);
      },
      [](Inputs, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) detail::accumulate_reduced(*gin[0], g);
        if (gin[1]) detail::accumulate_reduced(*gin[1], g);
      });
}

inline Var sub(Var a, Var b) {
  return a.tape->record(
      {a, b},
      [](Inputs in, Matrix& out) {
        Index r = detail::broadcast_dim(in[0]->rows(), in[1]->rows(), "sub");
        Index c = detail::broadcast_dim(in[0]->cols(), in[1]->cols(), "sub");
        out = detail::broadcast(*in[0], r, c) - detail::broadcast(*in[1], r, c);
      },
      [](Inputs, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) detail::accumulate_reduced(*gin[0], g);
        if (gin[1]) detail::accumulate_reduced(*gin[1], -g);
      });
}

inline Var mul(Var a, Var b) {
  return a.tape->record(
      {a, b},
      [](Inputs in, Matrix& out) {
        Index r = detail::broadcast_dim(in[0]->rows(), in[1]->rows(), "mul");
        Index c = detail::broadcast_dim(in[0]->cols(), in[1]->cols(), "mul");
        out = detail::broadcast(*in[0], r, c).cwiseProduct(detail::broadcast(*in[1], r, c));
      },
      [](Inputs in, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        Index r = g.rows(), c = g.cols();
        if (gin[0]) detail::accumulate_reduced(*gin[0], g.cwiseProduct(detail::broadcast(*in[1], r, c)));
        if (gin[1]) detail::accumulate_reduced(*gin[1], g.cwiseProduct(detail::broadcast(*in[0], r, c)));
      });
}

inline Var scale(Var a, double k) {
  return a.tape->record(
      {a}, [k](Inputs in, Matrix& out) { out = *in[0] * k; },
      [k](Inputs, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) *gin[0] += g * k;
      });
}

inline Var add_scalar(Var a, double k) {
  return a.tape->record(
      {a}, [k](Inputs in, Matrix& out) { out = in[0]->array() + k; },
      [](Inputs, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) *gin[0] += g;
      });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator+(Var a, double k) { return add_scalar(a, k); }
inline Var operator+(double k, Var a) { return add_scalar(a, k); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator-(double k, Var a) { return add_scalar(scale(a, -1.0), k); }

// ---- linear algebra ----

inline Var matmul(Var a, Var b) {
  return a.tape->record(
      {a, b},
      [](Inputs in, Matrix& out) {
        if (in[0]->cols() != in[1]->rows()) {
          throw ShapeError("matmul: " + Tape::shape_str(*in[0]) + " x " + Tape::shape_str(*in[1]));
        }
        out.noalias() = *in[0] * *in[1];
      },
      [](Inputs in, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) gin[0]->noalias() += g * in[1]->transpose();
        if (gin[1]) gin[1]->noalias() += in[0]->transpose() * g;
      });
}

// ---- elementwise nonlinearities ----

inline Var sigmoid(Var x) {
  return x.tape->record(
      {x},
      [](Inputs in, Matrix& out) {
        // exp(-v) overflows to inf for v << 0, which still yields 0.
        out = (1.0 + (-in[0]->array()).exp()).inverse().matrix();
      },
      [](Inputs, const Matrix& out, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) gin[0]->array() += g.array() * out.array() * (1.0 - out.array());
      });
}

inline Var relu(Var x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var softplus(Var x) {
  return x.tape->record(
      {x},
      [](Inputs in, Matrix& out) {
        const auto v = in[0]->array();
        out = (v.max(0.0) + (-v.abs()).exp().log1p()).matrix();
      },
      [](Inputs in, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) gin[0]->array() += g.array() * (1.0 + (-in[0]->array()).exp()).inverse();
      });
}

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var reciprocal(Var x) {
  return detail::unary(x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Subgradient 0 at the kink.
inline Var abs(Var x) {
  return detail::unary(x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---- reductions and reshaping ----

inline Var sum(Var x) {
  return x.tape->record(
      {x}, [](Inputs in, Matrix& out) { out = Matrix::Constant(1, 1, in[0]->sum()); },
      [](Inputs in, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) gin[0]->array() += g(0, 0);
        (void)in;
      });
}

inline Var mean(Var x) {
  double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

/// Per-row sums: (r x c) -> (r x 1).
inline Var row_sums(Var x) {
  return x.tape->record(
      {x}, [](Inputs in, Matrix& out) { out = in[0]->rowwise().sum(); },
      [](Inputs in, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) *gin[0] += g.replicate(1, in[0]->cols());
      });
}

/// Columns [start, start + count).
inline Var slice_cols(Var x, Index start, Index count) {
  return x.tape->record(
      {x},
      [start, count](Inputs in, Matrix& out) {
        if (start < 0 || count < 0 || start + count > in[0]->cols()) throw ShapeError("slice_cols out of range");
        out = in[0]->middleCols(start, count);
      },
      [start, count](Inputs, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        if (gin[0]) gin[0]->middleCols(start, count) += g;
      });
}

// ---- convolution ----

/// Valid 1-D convolution over channel-major rows: one row holds
/// in_channels blocks of `length` values.
struct Conv1dShape {
  Index in_channels = 1;
  Index length = 0;
  Index out_channels = 1;
  Index kernel = 1;
  Index stride = 1;

  Index out_length() const { return length < kernel ? 0 : (length - kernel) / stride + 1; }
  Index in_width() const { return in_channels * length; }
  Index out_width() const { return out_channels * out_length(); }
  Index patch() const { return in_channels * kernel; }
};

/// x: (batch x in_channels*length), w: (out_channels x in_channels*kernel),
/// b: (1 x out_channels). Returns (batch x out_channels*out_length).
/// Works one sample at a time so the im2col block stays in cache; the
/// backward pass rebuilds it rather than keeping the whole batch's copy.
inline Var conv1d(Var x, Var w, Var b, Conv1dShape s) {
  using RowMap = Eigen::Map<Matrix>;
  using ConstRowMap = Eigen::Map<const Matrix>;
  auto im2col = [s](const double* xrow, Matrix& c) {
    const Index lo = s.out_length();
    c.resize(s.patch(), lo);
    for (Index ci = 0; ci < s.in_channels; ++ci) {
      const double* src = xrow + ci * s.length;
      for (Index k = 0; k < s.kernel; ++k) {
        double* dst = c.row(ci * s.kernel + k).data();
        for (Index o = 0; o < lo; ++o) dst[o] = src[o * s.stride + k];
      }
    }
  };
  return x.tape->record(
      {x, w, b},
      [s, im2col](Inputs in, Matrix& out) {
        const Matrix& xv = *in[0];
        if (xv.cols() != s.in_width() || in[1]->rows() != s.out_channels || in[1]->cols() != s.patch() ||
            in[2]->size() != s.out_channels) {
          throw ShapeError("conv1d: shape mismatch");
        }
        const Index lo = s.out_length();
        out.resize(xv.rows(), s.out_width());
        Matrix cols;
        const Eigen::VectorXd bias = Eigen::Map<const Eigen::VectorXd>(in[2]->data(), s.out_channels);
        for (Index n = 0; n < xv.rows(); ++n) {
          im2col(xv.row(n).data(), cols);
          RowMap y(out.row(n).data(), s.out_channels, lo);
          y.noalias() = *in[1] * cols;
          y.colwise() += bias;
        }
      },
      [s, im2col](Inputs in, const Matrix&, const Matrix& g, std::span<Matrix* const> gin) {
        const Index lo = s.out_length();
        Matrix cols, gc;
        for (Index n = 0; n < g.rows(); ++n) {
          ConstRowMap gy(g.row(n).data(), s.out_channels, lo);
          if (gin[2]) gin[2]->noalias() += gy.rowwise().sum().transpose();
          if (gin[1]) {
            im2col(in[0]->row(n).data(), cols);
            gin[1]->noalias() += gy * cols.transpose();
          }
          if (gin[0]) {
            gc.noalias() = in[1]->transpose() * gy;  // (patch x lo)
            double* xrow = gin[0]->row(n).data();
            for (Index ci = 0; ci < s.in_channels; ++ci) {
              double* dst = xrow + ci * s.length;
              for (Index k = 0; k < s.kernel; ++k) {
                const double* src = gc.row(ci * s.kernel + k).data();
                for (Index o = 0; o < lo; ++o) dst[o * s.stride + k] += src[o];
              }
            }
          }
        }
      });
}

// ---- gradient checking ----

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t n_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-4;
  // 0 checks every coordinate; otherwise at most this many per parameter,
  // chosen by `seed`.
  Index max_coords_per_parameter = 0;
  std::uint64_t seed = 0;
};

inline std::vector<Index> choose_coordinates(Index size, Index limit, std::mt19937_64& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(size));
  for (Index i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
  if (limit <= 0 || limit >= size) return idx;
  for (Index i = 0; i < limit; ++i) {
    std::uniform_int_distribution<Index> pick(i, size - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(limit));
  return idx;
}

/// Compares `analytic[k]` against central differences of `f` over params[k].
/// Relative error per coordinate is |a - n| / (|a| + 1e-12).
inline GradCheckReport finite_diff_check(const std::function<double()>& f, std::span<Parameter* const> params,
                                         std::span<const Matrix> analytic, GradCheckOptions opt = {}) {
  if (!(opt.step > 0.0)) throw DomainError("finite_diff_check: step must be > 0");
  if (analytic.size() != params.size()) throw ShapeError("finite_diff_check: one gradient per parameter required");
  auto eval = [&] {
    double v = f();
    if (!std::isfinite(v)) throw DomainError("finite_diff_check: function value is not finite");
    return v;
  };
  eval();
  std::mt19937_64 rng(opt.seed);
  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (analytic[k].rows() != p.value.rows() || analytic[k].cols() != p.value.cols()) {
      throw ShapeError("finite_diff_check: gradient shape mismatch for " + p.name);
    }
    for (Index idx : choose_coordinates(p.size(), opt.max_coords_per_parameter, rng)) {
      double& x = p.value.data()[idx];
      const double saved = x;
      x = saved + opt.step;
      const double up = eval();
      x = saved - opt.step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[k].data()[idx];
      const double rel = std::abs(a - numeric) / (std::abs(a) + 1e-12);
      ++rep.n_checked;
      if (rel > rep.max_rel_error || rep.worst_index < 0) {
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        rep.worst_parameter = p.name;
        rep.worst_index = idx;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

/// Tape-driven form: `build` records the scalar loss on a fresh tape.
inline GradCheckReport finite_diff_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params,
                                         GradCheckOptions opt = {}) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    auto out = build(tape);
    tape.backward(out);
  }
  std::vector<Matrix> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  auto f = [&] {
    Tape tape;
    return build(tape).scalar();
  };
  return finite_diff_check(f, params, analytic, opt);
}

// ---- optimizers ----

struct AdamOptions {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const double lr = opt_.learning_rate * std::sqrt(c2) / c1;
    const double b1 = opt_.beta1, b2 = opt_.beta2, eps = opt_.epsilon;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      if (!p->trainable) continue;
      double* w = p->value.data();
      double* m = m_[k].data();
      double* v = v_[k].data();
      const double* g = p->grad.data();
      for (Index i = 0; i < p->value.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter*> params_;
  AdamOptions opt_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double learning_rate) : params_(std::move(params)), lr_(learning_rate) {}

  void step() {
    for (auto* p : params_) {
      if (p->trainable) p->value -= lr_ * p->grad;
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter*> params_;
  double lr_;
};

}  // namespace axs::ad
