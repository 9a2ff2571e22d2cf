#pragma once

// Reverse-mode automatic differentiation over Tensor<Scalar>.
//
// A Tape records every operation in execution order, so its node list is a
// topological order by construction. Var is a cheap handle (tape pointer +
// node id). Ops are free functions; each computes its forward value with
// Eigen and, when any input requires a gradient, registers a closure that
// accumulates into the inputs' gradients during Tape::backward.
//
// Convolution is cross-correlation (no kernel flip), as in every deep
// learning framework.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "swardmix/errors.hpp"
#include "swardmix/tensor.hpp"

namespace swardmix {

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<Scalar>& value() const { return tape_->value(*this); }
  const Tensor<Scalar>& grad() const { return tape_->grad(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<Scalar>& out_grad)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // empty until backward reaches the node
    bool requires_grad = false;
    Backward backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<Scalar> constant(Tensor<Scalar> value) { return push("constant", {}, std::move(value), false, {}); }

  /// Leaf whose gradient is populated by backward().
  Var<Scalar> parameter(Tensor<Scalar> value) { return push("parameter", {}, std::move(value), true, {}); }

  /// Records an op. `backward` is dropped if no input needs a gradient.
  Var<Scalar> record(std::string op, std::vector<Var<Scalar>> inputs, Tensor<Scalar> value, Backward backward) {
    std::vector<std::size_t> ids;
    bool needs = false;
    for (const auto& v : inputs) {
      check_owned(v);
      ids.push_back(v.id());
      needs = needs || nodes_[v.id()].requires_grad;
    }
    if (check_finite_ && !value.all_finite()) {
      throw NumericError("non-finite value produced by " + op);
    }
    return push(std::move(op), std::move(ids), std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients in reverse order.
  void backward(Var<Scalar> loss) {
    if (!loss.valid() || loss.tape() != this) {
      throw std::invalid_argument("backward: loss is not recorded on this tape");
    }
    const Node& out = nodes_[loss.id()];
    if (out.value.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_string(out.value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
    nodes_[loss.id()].grad = Tensor<Scalar>::constant(out.value.shape(), Scalar(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      // Closures only touch gradients of earlier nodes, so n.grad stays put.
      n.backward(*this, n.grad);
    }
  }

  const Tensor<Scalar>& value(Var<Scalar> v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  /// Gradient of the last backward() call; zeros if the node was unreachable.
  const Tensor<Scalar>& grad(Var<Scalar> v) {
    check_owned(v);
    return grad_ref(v.id());
  }

  bool requires_grad(Var<Scalar> v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer for node `id`, allocated as zeros on first use.
  Tensor<Scalar>& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<Scalar>::zeros(n.value.shape());
    return n.grad;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  Var<Scalar> push(std::string op, std::vector<std::size_t> inputs, Tensor<Scalar> value, bool requires_grad,
                   Backward backward) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), Tensor<Scalar>(), requires_grad,
                          std::move(backward)});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  void check_owned(Var<Scalar> v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument("variable is detached from this tape");
    }
  }

  std::vector<Node> nodes_;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

namespace detail {

template <typename Scalar>
Tape<Scalar>& same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (!a.valid() || a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return *a.tape();
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  const auto ia = a.id(), ib = b.id();
  return tape.record("add", {a, b}, std::move(out), [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.needs_grad(ia)) t.grad_ref(ia).array() += g.array();
    if (t.needs_grad(ib)) t.grad_ref(ib).array() += g.array();
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  const auto ia = a.id(), ib = b.id();
  return tape.record("sub", {a, b}, std::move(out), [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.needs_grad(ia)) t.grad_ref(ia).array() += g.array();
    if (t.needs_grad(ib)) t.grad_ref(ib).array() -= g.array();
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  auto& tape = detail::same_tape(a, b);
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  const auto ia = a.id(), ib = b.id();
  return tape.record("mul", {a, b}, std::move(out), [ia, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (t.needs_grad(ia)) t.grad_ref(ia).array() += g.array() * t.nodes()[ib].value.array();
    if (t.needs_grad(ib)) t.grad_ref(ib).array() += g.array() * t.nodes()[ia].value.array();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().array() * factor);
  const auto ia = a.id();
  return a.tape()->record("scale", {a}, std::move(out), [ia, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.grad_ref(ia).array() += g.array() * factor;
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  Tensor<Scalar> out(a.shape(), a.value().array().max(Scalar(0)));
  const auto ia = a.id();
  return a.tape()->record("relu", {a}, std::move(out), [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& x = t.nodes()[ia].value.array();
    t.grad_ref(ia).array() += (x > Scalar(0)).select(g.array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Tensor<Scalar> out(a.shape(), Scalar(1) / (Scalar(1) + (-a.value().array()).exp()));
  const auto ia = a.id();
  auto& tape = *a.tape();
  const std::size_t io = tape.size();
  return tape.record("sigmoid", {a}, std::move(out), [ia, io](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& y = t.nodes()[io].value.array();
    t.grad_ref(ia).array() += g.array() * y * (Scalar(1) - y);
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  const auto ia = a.id();
  return a.tape()->record("reshape", {a}, a.value().reshaped(std::move(shape)),
                          [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) { t.grad_ref(ia).array() += g.array(); });
}

/// Column `col` of a B×K matrix as a B×1 matrix.
template <typename Scalar>
Var<Scalar> column(Var<Scalar> a, Index col) {
  detail::require_rank(a.shape(), 2, "column");
  const Index rows = a.shape()[0], cols = a.shape()[1];
  if (col < 0 || col >= cols) throw ShapeError("column: index " + std::to_string(col) + " out of range");
  Tensor<Scalar> out({rows, 1});
  out.matrix() = a.value().matrix().col(col);
  const auto ia = a.id();
  return a.tape()->record("column", {a}, std::move(out), [ia, col](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.grad_ref(ia).matrix().col(col) += g.matrix();
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a (M×K) · b (K×N), or a · bᵀ when `transpose_b` (b is N×K).
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b, bool transpose_b = false) {
  auto& tape = detail::same_tape(a, b);
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const Index m = a.shape()[0], k = a.shape()[1];
  const Index bk = transpose_b ? b.shape()[1] : b.shape()[0];
  const Index n = transpose_b ? b.shape()[0] : b.shape()[1];
  if (k != bk) throw ShapeError("matmul: inner dims " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<Scalar> out({m, n});
  if (transpose_b) {
    out.matrix().noalias() = a.value().matrix() * b.value().matrix().transpose();
  } else {
    out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  }
  const auto ia = a.id(), ib = b.id();
  return tape.record("matmul", {a, b}, std::move(out), [ia, ib, transpose_b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& av = t.nodes()[ia].value;
    const auto& bv = t.nodes()[ib].value;
    if (t.needs_grad(ia)) {
      if (transpose_b) {
        t.grad_ref(ia).matrix().noalias() += g.matrix() * bv.matrix();
      } else {
        t.grad_ref(ia).matrix().noalias() += g.matrix() * bv.matrix().transpose();
      }
    }
    if (t.needs_grad(ib)) {
      if (transpose_b) {
        t.grad_ref(ib).matrix().noalias() += g.matrix().transpose() * av.matrix();
      } else {
        t.grad_ref(ib).matrix().noalias() += av.matrix().transpose() * g.matrix();
      }
    }
  });
}

/// Fully connected layer: input (B×F) · weight (F×G) + bias (G), bias broadcast over rows.
template <typename Scalar>
Var<Scalar> dense(Var<Scalar> input, Var<Scalar> weight, Var<Scalar> bias) {
  auto& tape = detail::same_tape(input, weight);
  detail::same_tape(input, bias);
  detail::require_rank(input.shape(), 2, "dense");
  detail::require_rank(weight.shape(), 2, "dense");
  const Index batch = input.shape()[0], fan_in = input.shape()[1], fan_out = weight.shape()[1];
  if (weight.shape()[0] != fan_in) {
    throw ShapeError("dense: input " + shape_string(input.shape()) + " vs weight " + shape_string(weight.shape()));
  }
  if (bias.shape() != Shape{fan_out}) {
    throw ShapeError("dense: bias " + shape_string(bias.shape()) + " for " + std::to_string(fan_out) + " outputs");
  }
  Tensor<Scalar> out({batch, fan_out});
  out.matrix().noalias() = input.value().matrix() * weight.value().matrix();
  out.matrix().rowwise() += bias.value().array().matrix().transpose();
  const auto ix = input.id(), iw = weight.id(), ib = bias.id();
  return tape.record("dense", {input, weight, bias}, std::move(out),
                     [ix, iw, ib](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                       const auto gm = g.matrix();
                       if (t.needs_grad(ix)) {
                         t.grad_ref(ix).matrix().noalias() += gm * t.nodes()[iw].value.matrix().transpose();
                       }
                       if (t.needs_grad(iw)) {
                         t.grad_ref(iw).matrix().noalias() += t.nodes()[ix].value.matrix().transpose() * gm;
                       }
                       if (t.needs_grad(ib)) t.grad_ref(ib).array() += gm.colwise().sum().transpose().array();
                     });
}

namespace detail {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index out_channels, kernel_h, kernel_w;
  Index stride, padding, out_h, out_w;

  Index patch() const { return channels * kernel_h * kernel_w; }
  Index positions() const { return out_h * out_w; }
};

template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(g.patch(), g.positions());
  for (Index c = 0; c < g.channels; ++c) {
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        const Index row = (c * g.kernel_h + kh) * g.kernel_w + kw;
        Scalar* dst = cols.row(row).data();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            const bool inside = ih >= 0 && ih < g.height && iw >= 0 && iw < g.width;
            dst[oh * g.out_w + ow] = inside ? image[(c * g.height + ih) * g.width + iw] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* image) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index kh = 0; kh < g.kernel_h; ++kh) {
      for (Index kw = 0; kw < g.kernel_w; ++kw) {
        const Index row = (c * g.kernel_h + kh) * g.kernel_w + kw;
        const Scalar* src = cols.row(row).data();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kw;
            if (iw < 0 || iw >= g.width) continue;
            image[(c * g.height + ih) * g.width + iw] += src[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation: input NCHW, kernel OIHW -> N×O×OH×OW with
/// OH = floor((H + 2·padding − KH)/stride) + 1 (likewise OW).
template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> kernel, Index stride = 1, Index padding = 0) {
  auto& tape = detail::same_tape(input, kernel);
  detail::require_rank(input.shape(), 4, "conv2d");
  detail::require_rank(kernel.shape(), 4, "conv2d");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (ks[1] != is[1]) {
    throw ShapeError("conv2d: input " + shape_string(is) + " has " + std::to_string(is[1]) +
                     " channels, kernel " + shape_string(ks) + " expects " + std::to_string(ks[1]));
  }
  detail::ConvGeometry geo{is[0], is[1], is[2], is[3], ks[0], ks[2], ks[3], stride, padding, 0, 0};
  geo.out_h = (geo.height + 2 * padding - geo.kernel_h) / stride + 1;
  geo.out_w = (geo.width + 2 * padding - geo.kernel_w) / stride + 1;
  if (geo.height + 2 * padding < geo.kernel_h || geo.width + 2 * padding < geo.kernel_w) {
    throw ShapeError("conv2d: kernel " + shape_string(ks) + " larger than padded input " + shape_string(is));
  }

  Tensor<Scalar> out({geo.batch, geo.out_channels, geo.out_h, geo.out_w});
  const auto weights = kernel.value().matrix(geo.out_channels, geo.patch());
  RowMatrix<Scalar> cols;
  const Index in_stride = geo.channels * geo.height * geo.width;
  const Index out_stride = geo.out_channels * geo.positions();
  for (Index n = 0; n < geo.batch; ++n) {
    detail::im2col(input.value().data() + n * in_stride, geo, cols);
    Eigen::Map<RowMatrix<Scalar>>(out.data() + n * out_stride, geo.out_channels, geo.positions()).noalias() =
        weights * cols;
  }

  const auto ix = input.id(), ik = kernel.id();
  return tape.record("conv2d", {input, kernel}, std::move(out), [ix, ik, geo](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto& x = t.nodes()[ix].value;
    const auto w = t.nodes()[ik].value.matrix(geo.out_channels, geo.patch());
    const bool need_x = t.needs_grad(ix), need_w = t.needs_grad(ik);
    const Index in_stride = geo.channels * geo.height * geo.width;
    const Index out_stride = geo.out_channels * geo.positions();
    RowMatrix<Scalar> cols, dcols;
    for (Index n = 0; n < geo.batch; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> gn(g.data() + n * out_stride, geo.out_channels, geo.positions());
      if (need_w) {
        detail::im2col(x.data() + n * in_stride, geo, cols);
        t.grad_ref(ik).matrix(geo.out_channels, geo.patch()).noalias() += gn * cols.transpose();
      }
      if (need_x) {
        dcols.noalias() = w.transpose() * gn;
        detail::col2im_add(dcols, geo, t.grad_ref(ix).data() + n * in_stride);
      }
    }
  });
}

/// Adds a per-channel bias (length C) to an NCHW tensor.
template <typename Scalar>
Var<Scalar> add_channel_bias(Var<Scalar> input, Var<Scalar> bias) {
  auto& tape = detail::same_tape(input, bias);
  detail::require_rank(input.shape(), 4, "add_channel_bias");
  const auto& s = input.shape();
  if (bias.shape() != Shape{s[1]}) {
    throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) + " for input " + shape_string(s));
  }
  const Index planes = s[0] * s[1], area = s[2] * s[3], channels = s[1];
  Tensor<Scalar> out = input.value();
  auto om = out.matrix(planes, area);
  for (Index p = 0; p < planes; ++p) om.row(p).array() += bias.value()[p % channels];
  const auto ix = input.id(), ib = bias.id();
  return tape.record("add_channel_bias", {input, bias}, std::move(out),
                     [ix, ib, planes, area, channels](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                       if (t.needs_grad(ix)) t.grad_ref(ix).array() += g.array();
                       if (t.needs_grad(ib)) {
                         const auto gm = g.matrix(planes, area);
                         auto& gb = t.grad_ref(ib);
                         for (Index p = 0; p < planes; ++p) gb[p % channels] += gm.row(p).sum();
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions and pooling

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Tensor<Scalar> out({1}, {a.value().array().sum()});
  const auto ia = a.id();
  return a.tape()->record("sum", {a}, std::move(out), [ia](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.grad_ref(ia).array() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a) {
  const Index n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  Tensor<Scalar> out({1}, {a.value().array().sum() / Scalar(n)});
  const auto ia = a.id();
  return a.tape()->record("mean", {a}, std::move(out), [ia, n](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    t.grad_ref(ia).array() += g[0] / Scalar(n);
  });
}

/// Max pooling over NCHW with a square window; argmax positions are saved for backward.
template <typename Scalar>
Var<Scalar> max_pool2d(Var<Scalar> input, Index window, Index stride) {
  detail::require_rank(input.shape(), 4, "max_pool2d");
  const auto& s = input.shape();
  if (window < 1 || stride < 1 || window > s[2] || window > s[3]) {
    throw ShapeError("max_pool2d: window " + std::to_string(window) + "/stride " + std::to_string(stride) +
                     " invalid for " + shape_string(s));
  }
  const Index oh = (s[2] - window) / stride + 1, ow = (s[3] - window) / stride + 1;
  Tensor<Scalar> out({s[0], s[1], oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const auto& x = input.value();
  Index o = 0;
  for (Index p = 0; p < s[0] * s[1]; ++p) {
    const Index base = p * s[2] * s[3];
    for (Index r = 0; r < oh; ++r) {
      for (Index c = 0; c < ow; ++c, ++o) {
        Index best = base + (r * stride) * s[3] + c * stride;
        for (Index dr = 0; dr < window; ++dr) {
          for (Index dc = 0; dc < window; ++dc) {
            const Index idx = base + (r * stride + dr) * s[3] + c * stride + dc;
            if (x[idx] > x[best]) best = idx;
          }
        }
        out[o] = x[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  const auto ix = input.id();
  return input.tape()->record("max_pool2d", {input}, std::move(out),
                              [ix, argmax = std::move(argmax)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                auto& gx = t.grad_ref(ix);
                                for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[static_cast<Index>(i)];
                              });
}

/// NCHW -> N×C per-channel spatial means.
template <typename Scalar>
Var<Scalar> global_avg_pool(Var<Scalar> input) {
  detail::require_rank(input.shape(), 4, "global_avg_pool");
  const auto& s = input.shape();
  const Index planes = s[0] * s[1], area = s[2] * s[3];
  Tensor<Scalar> out({s[0], s[1]});
  out.array() = input.value().matrix(planes, area).rowwise().mean().array();
  const auto ix = input.id();
  return input.tape()->record("global_avg_pool", {input}, std::move(out),
                              [ix, planes, area](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                auto gx = t.grad_ref(ix).matrix(planes, area);
                                for (Index p = 0; p < planes; ++p) gx.row(p).array() += g[p] / Scalar(area);
                              });
}

// ---------------------------------------------------------------------------
// Normalization, softmax and losses

/// Divides each row by max(‖row‖₂, eps).
template <typename Scalar>
Var<Scalar> l2_normalize(Var<Scalar> input, Scalar eps = Scalar(1e-12)) {
  detail::require_rank(input.shape(), 2, "l2_normalize");
  if (!(eps > Scalar(0))) throw std::invalid_argument("l2_normalize: eps must be positive");
  const Index rows = input.shape()[0];
  Eigen::Array<Scalar, Eigen::Dynamic, 1> norms = input.value().matrix().rowwise().norm().array();
  Tensor<Scalar> out = input.value();
  auto om = out.matrix();
  for (Index r = 0; r < rows; ++r) om.row(r) /= std::max(norms[r], eps);
  const auto ix = input.id();
  auto& tape = *input.tape();
  const std::size_t io = tape.size();
  return tape.record("l2_normalize", {input}, std::move(out),
                     [ix, io, norms, eps, rows](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                       const auto y = t.nodes()[io].value.matrix();
                       const auto gm = g.matrix();
                       auto gx = t.grad_ref(ix).matrix();
                       for (Index r = 0; r < rows; ++r) {
                         if (norms[r] > eps) {
                           gx.row(r) += (gm.row(r) - y.row(r) * y.row(r).dot(gm.row(r))) / norms[r];
                         } else {
                           gx.row(r) += gm.row(r) / eps;
                         }
                       }
                     });
}

/// Numerically stable row-wise softmax of a B×K matrix (plain Eigen, no tape).
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> shifted = logits.colwise() - logits.rowwise().maxCoeff();
  RowMatrix<Scalar> e = shifted.array().exp().matrix();
  return e.array().colwise() / e.rowwise().sum().array();
}

template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> logits) {
  detail::require_rank(logits.shape(), 2, "softmax");
  Tensor<Scalar> out(logits.shape());
  out.matrix() = softmax_rows(logits.value().matrix());
  const auto ix = logits.id();
  auto& tape = *logits.tape();
  const std::size_t io = tape.size();
  return tape.record("softmax", {logits}, std::move(out), [ix, io](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    const auto y = t.nodes()[io].value.matrix();
    const auto gm = g.matrix();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (gm.array() * y.array()).rowwise().sum().matrix();
    t.grad_ref(ix).matrix().array() += y.array() * (gm.colwise() - dots).array();
  });
}

/// −(1/B)·Σᵢ Σⱼ targetsᵢⱼ·log softmax(logitsᵢ)ⱼ with constant soft targets.
template <typename Scalar>
Var<Scalar> soft_cross_entropy(Var<Scalar> logits, const Tensor<Scalar>& targets) {
  detail::require_rank(logits.shape(), 2, "soft_cross_entropy");
  detail::require_same_shape(logits.shape(), targets.shape(), "soft_cross_entropy");
  const auto x = logits.value().matrix();
  const Index batch = x.rows();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_max = x.rowwise().maxCoeff();
  const RowMatrix<Scalar> shifted = x.colwise() - row_max;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lse = shifted.array().exp().rowwise().sum().log().matrix();
  const RowMatrix<Scalar> log_probs = shifted.colwise() - lse;
  const Scalar loss = -(targets.matrix().array() * log_probs.array()).sum() / Scalar(batch);
  RowMatrix<Scalar> probs = log_probs.array().exp().matrix();
  const auto ix = logits.id();
  return logits.tape()->record(
      "soft_cross_entropy", {logits}, Tensor<Scalar>({1}, {loss}),
      [ix, probs = std::move(probs), targets, batch](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const auto v = targets.matrix();
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mass = v.rowwise().sum();
        t.grad_ref(ix).matrix() += ((probs.array().colwise() * mass.array()) - v.array()).matrix() * (g[0] / Scalar(batch));
      });
}

/// sqrt(mean((pred − target)²)). At zero error the gradient is taken as zero.
template <typename Scalar>
Var<Scalar> rmse(Var<Scalar> pred, Var<Scalar> target) {
  auto& tape = detail::same_tape(pred, target);
  detail::require_same_shape(pred.shape(), target.shape(), "rmse");
  const Index n = pred.value().size();
  if (n == 0) throw ShapeError("rmse of empty tensors");
  const Scalar value = std::sqrt((pred.value().array() - target.value().array()).square().sum() / Scalar(n));
  const auto ip = pred.id(), it = target.id();
  return tape.record("rmse", {pred, target}, Tensor<Scalar>({1}, {value}),
                     [ip, it, n, value](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                       if (value <= std::numeric_limits<Scalar>::min()) return;
                       const Scalar k = g[0] / (Scalar(n) * value);
                       const auto diff = t.nodes()[ip].value.array() - t.nodes()[it].value.array();
                       if (t.needs_grad(ip)) t.grad_ref(ip).array() += diff * k;
                       if (t.needs_grad(it)) t.grad_ref(it).array() -= diff * k;
                     });
}

}  // namespace swardmix
