// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stdp/rng.hpp"
#include "stdp/tensor.hpp"

namespace stdp::ad {

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of primitive applications.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` simply walks it in reverse. A tape is
/// built per step and discarded; it is not thread-safe.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    return push(std::move(n));
  }

  /// Owned leaf that records its gradient on the tape (read back with `grad`).
  Var<T> variable(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    n.op = "variable";
    return push(std::move(n));
  }

  /// Leaf referencing external storage. When `grad_sink` is non-null the
  /// gradient is added into it by `backward`; the referenced tensors must
  /// outlive the tape.
  Var<T> leaf(const Tensor<T>& value, Tensor<T>* grad_sink) {
    Node n;
    n.external = &value;
    n.grad_sink = grad_sink;
    n.requires_grad = grad_sink != nullptr;
    n.op = "parameter";
    return push(std::move(n));
  }

  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<int> inputs,
                BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  Var<T> record(const char* op, Tensor<T> value, const std::vector<int>& inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor<T>& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const char* op(int id) const { return nodes_[id].op; }

  /// Gradient of a node after `backward`; empty if nothing reached it.
  const Tensor<T>& grad(int id) const { return nodes_[id].grad; }
  const Tensor<T>& grad(Var<T> v) const { return nodes_[v.id()].grad; }

  Tensor<T>& grad_buffer(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  /// Reverse pass from a scalar. Tape-local gradients are reset first;
  /// external gradient sinks accumulate across calls.
  void backward(Var<T> loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = T{1};
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        n.backward(*this, id);
      } else if (n.grad_sink) {
        auto& sink = *n.grad_sink;
        for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += n.grad[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T>* grad_sink = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "";
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
void check_same_tape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

struct Broadcast {
  Shape out;
  bool a_is_big;
  std::size_t inner;  // numel of the smaller operand
  std::size_t outer;  // repeats of the smaller operand
};

// One operand's shape must be a suffix of the other's (leading-axis broadcast).
inline Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  const bool a_big = a.size() >= b.size();
  const Shape& big = a_big ? a : b;
  const Shape& small = a_big ? b : a;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (big[off + i] != small[i]) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
    }
  }
  const std::size_t inner = shape_numel(small);
  return {big, a_big, inner, inner == 0 ? 0 : shape_numel(big) / inner};
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class T, class Term>
void accumulate_reduced(Tensor<T>& dst, bool dst_is_big, std::size_t outer, std::size_t inner,
                        Term term) {
  if (dst_is_big) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) dst[o * inner + j] += term(o, j);
  } else {
    for (std::size_t j = 0; j < inner; ++j) {
      double acc = 0.0;
      for (std::size_t o = 0; o < outer; ++o) acc += static_cast<double>(term(o, j));
      dst[j] += static_cast<T>(acc);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with leading-axis broadcast.

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape("add", a, b);
  const auto bc = detail::broadcast("add", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(bc.out);
  for (std::size_t o = 0; o < bc.outer; ++o)
    for (std::size_t j = 0; j < bc.inner; ++j) {
      const std::size_t big = o * bc.inner + j;
      out[big] = bc.a_is_big ? av[big] + bv[j] : av[j] + bv[big];
    }
  const int ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib, bc](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto term = [&](std::size_t o, std::size_t j) { return g[o * bc.inner + j]; };
    if (t.requires_grad(ia)) detail::accumulate_reduced(t.grad_buffer(ia), bc.a_is_big, bc.outer, bc.inner, term);
    if (t.requires_grad(ib)) detail::accumulate_reduced(t.grad_buffer(ib), !bc.a_is_big, bc.outer, bc.inner, term);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_tape("sub", a, b);
  const auto bc = detail::broadcast("sub", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(bc.out);
  for (std::size_t o = 0; o < bc.outer; ++o)
    for (std::size_t j = 0; j < bc.inner; ++j) {
      const std::size_t big = o * bc.inner + j;
      out[big] = bc.a_is_big ? av[big] - bv[j] : av[j] - bv[big];
    }
  const int ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {ia, ib}, [ia, ib, bc](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto pos = [&](std::size_t o, std::size_t j) { return g[o * bc.inner + j]; };
    auto neg = [&](std::size_t o, std::size_t j) { return -g[o * bc.inner + j]; };
    if (t.requires_grad(ia)) detail::accumulate_reduced(t.grad_buffer(ia), bc.a_is_big, bc.outer, bc.inner, pos);
    if (t.requires_grad(ib)) detail::accumulate_reduced(t.grad_buffer(ib), !bc.a_is_big, bc.outer, bc.inner, neg);
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape("mul", a, b);
  const auto bc = detail::broadcast("mul", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(bc.out);
  for (std::size_t o = 0; o < bc.outer; ++o)
    for (std::size_t j = 0; j < bc.inner; ++j) {
      const std::size_t big = o * bc.inner + j;
      out[big] = bc.a_is_big ? av[big] * bv[j] : av[j] * bv[big];
    }
  const int ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib}, [ia, ib, bc](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    auto idx_a = [&](std::size_t o, std::size_t j) { return bc.a_is_big ? o * bc.inner + j : j; };
    auto idx_b = [&](std::size_t o, std::size_t j) { return bc.a_is_big ? j : o * bc.inner + j; };
    if (t.requires_grad(ia)) {
      detail::accumulate_reduced(t.grad_buffer(ia), bc.a_is_big, bc.outer, bc.inner,
                                    [&](std::size_t o, std::size_t j) { return g[o * bc.inner + j] * bv[idx_b(o, j)]; });
    }
    if (t.requires_grad(ib)) {
      detail::accumulate_reduced(t.grad_buffer(ib), !bc.a_is_big, bc.outer, bc.inner,
                                    [&](std::size_t o, std::size_t j) { return g[o * bc.inner + j] * av[idx_a(o, j)]; });
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= c;
  const int ia = a.id();
  return a.tape().record("scale", std::move(out), {ia}, [ia, c](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v += c;
  const int ia = a.id();
  return a.tape().record("add_scalar", std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <class T>
Var<T> neg(Var<T> a) {
  return scale(a, T{-1});
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

namespace detail {

template <class T, class Fwd, class Deriv>
Var<T> unary(const char* op, Var<T> a, Fwd fwd, Deriv deriv) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const int ia = a.id();
  return a.tape().record(op, std::move(out), {ia}, [ia, deriv](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
T log_sigmoid_scalar(T x) {
  return std::min(x, T{0}) - std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

template <class T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a, [](T x) { return detail::sigmoid_scalar(x); },
      [](T, T y) { return y * (T{1} - y); });
}

/// log σ(x), stable for large |x|.
template <class T>
Var<T> log_sigmoid(Var<T> a) {
  return detail::unary<T>(
      "log_sigmoid", a, [](T x) { return detail::log_sigmoid_scalar(x); },
      [](T x, T) { return detail::sigmoid_scalar(-x); });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> a) {
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const int ia = a.id();
  return a.tape().record("reshape", std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

namespace detail {

// Maps every output flat index to its input flat index.
inline std::vector<std::size_t> permutation_index(const Shape& in, const std::vector<std::size_t>& axes,
                                                  Shape& out_shape) {
  const std::size_t r = in.size();
  if (axes.size() != r) throw ShapeError("permute: axis list length mismatch for " + shape_str(in));
  std::vector<bool> seen(r, false);
  out_shape.assign(r, 0);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw ShapeError("permute: invalid axes for " + shape_str(in));
    seen[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  std::array<std::size_t, kMaxRank> dims{1, 1, 1, 1};
  std::array<std::size_t, kMaxRank> strides{0, 0, 0, 0};
  const std::size_t pad = kMaxRank - r;
  for (std::size_t i = 0; i < r; ++i) {
    dims[pad + i] = out_shape[i];
    strides[pad + i] = in_strides[axes[i]];
  }
  std::vector<std::size_t> idx;
  idx.reserve(shape_numel(in));
  for (std::size_t i0 = 0; i0 < dims[0]; ++i0)
    for (std::size_t i1 = 0; i1 < dims[1]; ++i1)
      for (std::size_t i2 = 0; i2 < dims[2]; ++i2)
        for (std::size_t i3 = 0; i3 < dims[3]; ++i3)
          idx.push_back(i0 * strides[0] + i1 * strides[1] + i2 * strides[2] + i3 * strides[3]);
  return idx;
}

}  // namespace detail

template <class T>
Var<T> permute(Var<T> a, std::vector<std::size_t> axes) {
  Shape out_shape;
  auto index = detail::permutation_index(a.shape(), axes, out_shape);
  const auto& av = a.value();
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = av[index[i]];
  const int ia = a.id();
  return a.tape().record("permute", std::move(out), {ia}, [ia, index = std::move(index)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < index.size(); ++i) ga[index[i]] += g[i];
  });
}

/// Swaps the last two axes.
template <class T>
Var<T> transpose(Var<T> a) {
  const std::size_t r = a.shape().size();
  if (r < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(a, std::move(axes));
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = parts[0].value().normalize_axis(axis);
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::check_same_tape("concat", parts[0], p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    out_shape[ax] += s[ax];
    ids.push_back(p.id());
  }
  const auto split = detail::split_axis(out_shape, ax);
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * split.inner);
  const std::size_t row = out_shape[ax] * split.inner;
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  return parts[0].tape().record("concat", std::move(out), ids,
                                [ids, widths, row, outer = split.outer](Tape<T>& t, int self) {
                                  const auto& g = t.grad(self);
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (t.requires_grad(ids[k])) {
                                      auto& gk = t.grad_buffer(ids[k]);
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          gk[o * widths[k] + j] += g[o * row + off + j];
                                    }
                                    off += widths[k];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Matrix product.

/// a: [..., m, k]; b: [k, n] (shared) or [..., k, n] with identical leading axes.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape("matmul", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto fail = [&] {
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  };
  if (as.size() < 2 || bs.size() < 2) fail();
  const std::size_t m = as[as.size() - 2], k = as.back();
  if (bs[bs.size() - 2] != k) fail();
  const std::size_t n = bs.back();
  const bool shared = bs.size() == 2;
  std::size_t batch = 1;
  if (!shared) {
    if (bs.size() != as.size()) fail();
    for (std::size_t i = 0; i + 2 < as.size(); ++i) {
      if (as[i] != bs[i]) fail();
      batch *= as[i];
    }
  } else {
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  }
  Shape out_shape = as;
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (shared) {
    kernels::gemm_nn(av.data(), bv.data(), out.data(), batch * m, k, n, false);
  } else {
    for (std::size_t s = 0; s < batch; ++s)
      kernels::gemm_nn(av.data() + s * m * k, bv.data() + s * k * n, out.data() + s * m * n, m, k, n, false);
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib},
                         [ia, ib, shared, batch, m, k, n](Tape<T>& t, int self) {
                           const auto& g = t.grad(self);
                           const auto& av = t.value(ia);
                           const auto& bv = t.value(ib);
                           if (shared) {
                             if (t.requires_grad(ia))
                               kernels::gemm_nt(g.data(), bv.data(), t.grad_buffer(ia).data(), batch * m, n, k, true);
                             if (t.requires_grad(ib))
                               kernels::gemm_tn(av.data(), g.data(), t.grad_buffer(ib).data(), k, batch * m, n, true);
                             return;
                           }
                           for (std::size_t s = 0; s < batch; ++s) {
                             const T* gs = g.data() + s * m * n;
                             if (t.requires_grad(ia))
                               kernels::gemm_nt(gs, bv.data() + s * k * n, t.grad_buffer(ia).data() + s * m * k, m, n, k, true);
                             if (t.requires_grad(ib))
                               kernels::gemm_tn(av.data() + s * m * k, gs, t.grad_buffer(ib).data() + s * k * n, k, m, n, true);
                           }
                         });
}

// ---------------------------------------------------------------------------
// Indexing.

/// Row gather from a rank-2 table: result shape = index_shape + [cols].
template <class T>
Var<T> gather(Var<T> table, std::span<const std::uint32_t> ids, Shape index_shape) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw ShapeError("gather: table must be rank 2, got " + shape_str(ts));
  if (shape_numel(index_shape) != ids.size()) {
    throw ShapeError("gather: " + std::to_string(ids.size()) + " ids for index shape " + shape_str(index_shape));
  }
  const std::size_t rows = ts[0], cols = ts[1];
  Shape out_shape = index_shape;
  out_shape.push_back(cols);
  Tensor<T> out(out_shape);
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw std::out_of_range("gather: row " + std::to_string(ids[i]) + " outside table " + shape_str(ts));
    }
    std::copy_n(tv.data() + ids[i] * cols, cols, out.data() + i * cols);
  }
  const int it = table.id();
  std::vector<std::uint32_t> saved(ids.begin(), ids.end());
  return table.tape().record("gather", std::move(out), {it}, [it, cols, saved = std::move(saved)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad_buffer(it);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = gt.data() + saved[i] * cols;
      const T* src = g.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
Var<T> gather(Var<T> table, std::span<const std::uint32_t> ids) {
  return gather(table, ids, Shape{ids.size()});
}

/// Entries where `mask` is non-zero become `fill`; their gradient is zero.
/// The mask shape must equal or be a trailing suffix of the value shape.
template <class T>
Var<T> masked_fill(Var<T> a, std::span<const std::uint8_t> mask, const Shape& mask_shape, T fill) {
  const auto bc = detail::broadcast("masked_fill", a.shape(), mask_shape);
  if (!bc.a_is_big || mask.size() != shape_numel(mask_shape)) {
    throw ShapeError("masked_fill: mask " + shape_str(mask_shape) + " does not fit " + shape_str(a.shape()));
  }
  Tensor<T> out = a.value();
  for (std::size_t o = 0; o < bc.outer; ++o)
    for (std::size_t j = 0; j < bc.inner; ++j)
      if (mask[j]) out[o * bc.inner + j] = fill;
  const int ia = a.id();
  std::vector<std::uint8_t> saved(mask.begin(), mask.end());
  return a.tape().record("masked_fill", std::move(out), {ia}, [ia, bc, saved = std::move(saved)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < bc.outer; ++o)
      for (std::size_t j = 0; j < bc.inner; ++j)
        if (!saved[j]) ga[o * bc.inner + j] += g[o * bc.inner + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation).

template <class T>
Var<T> sum(Var<T> a) {
  double acc = 0.0;
  for (T v : a.value().values()) acc += static_cast<double>(v);
  const int ia = a.id();
  return a.tape().record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {ia}, [ia](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (T v : a.value().values()) acc += static_cast<double>(v);
  const int ia = a.id();
  return a.tape().record("mean", Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {ia},
                         [ia, n](Tape<T>& t, int self) {
                           const T g = t.grad(self)[0] / static_cast<T>(n);
                           auto& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                         });
}

namespace detail {

template <class T>
Var<T> reduce_axis(const char* op, Var<T> a, int axis, bool average) {
  const std::size_t ax = a.value().normalize_axis(axis);
  const auto sp = split_axis(a.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < a.shape().size(); ++i)
    if (i != ax) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  const double norm = average ? 1.0 / static_cast<double>(sp.n) : 1.0;
  const auto& av = a.value();
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) acc += static_cast<double>(av[(o * sp.n + i) * sp.inner + j]);
      out[o * sp.inner + j] = static_cast<T>(acc * norm);
    }
  const int ia = a.id();
  return a.tape().record(op, std::move(out), {ia}, [ia, sp, norm](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        const T gv = static_cast<T>(g[o * sp.inner + j] * norm);
        for (std::size_t i = 0; i < sp.n; ++i) ga[(o * sp.n + i) * sp.inner + j] += gv;
      }
  });
}

}  // namespace detail

template <class T>
Var<T> sum(Var<T> a, int axis) {
  return detail::reduce_axis("sum_axis", a, axis, false);
}

template <class T>
Var<T> mean(Var<T> a, int axis) {
  return detail::reduce_axis("mean_axis", a, axis, true);
}

// ---------------------------------------------------------------------------
// Normalizations.

template <class T>
Var<T> softmax(Var<T> a, int axis = -1) {
  const std::size_t ax = a.value().normalize_axis(axis);
  const auto sp = detail::split_axis(a.shape(), ax);
  const auto& av = a.value();
  Tensor<T> out(a.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      auto at = [&](std::size_t i) { return (o * sp.n + i) * sp.inner + j; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) mx = std::max(mx, av[at(i)]);
      double z = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        const T e = std::exp(av[at(i)] - mx);
        out[at(i)] = e;
        z += static_cast<double>(e);
      }
      const T inv = static_cast<T>(1.0 / z);
      for (std::size_t i = 0; i < sp.n; ++i) out[at(i)] *= inv;
    }
  const int ia = a.id();
  return a.tape().record("softmax", std::move(out), {ia}, [ia, sp](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        auto at = [&](std::size_t i) { return (o * sp.n + i) * sp.inner + j; };
        double dot = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) dot += static_cast<double>(g[at(i)]) * y[at(i)];
        const T d = static_cast<T>(dot);
        for (std::size_t i = 0; i < sp.n; ++i) ga[at(i)] += y[at(i)] * (g[at(i)] - d);
      }
  });
}

template <class T>
Var<T> log_softmax(Var<T> a, int axis = -1) {
  const std::size_t ax = a.value().normalize_axis(axis);
  const auto sp = detail::split_axis(a.shape(), ax);
  const auto& av = a.value();
  Tensor<T> out(a.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.inner; ++j) {
      auto at = [&](std::size_t i) { return (o * sp.n + i) * sp.inner + j; };
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < sp.n; ++i) mx = std::max(mx, av[at(i)]);
      double z = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) z += std::exp(static_cast<double>(av[at(i)] - mx));
      const T lz = static_cast<T>(std::log(z)) + mx;
      for (std::size_t i = 0; i < sp.n; ++i) out[at(i)] = av[at(i)] - lz;
    }
  const int ia = a.id();
  return a.tape().record("log_softmax", std::move(out), {ia}, [ia, sp](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.inner; ++j) {
        auto at = [&](std::size_t i) { return (o * sp.n + i) * sp.inner + j; };
        double gs = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) gs += static_cast<double>(g[at(i)]);
        for (std::size_t i = 0; i < sp.n; ++i) ga[at(i)] += g[at(i)] - std::exp(y[at(i)]) * static_cast<T>(gs);
      }
  });
}

/// Normalizes over the last axis, then applies per-feature gain and bias.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5) {
  detail::check_same_tape("layer_norm", x, gain);
  detail::check_same_tape("layer_norm", x, bias);
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not match features of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.value().size() / n;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<T> out(x.shape());
  std::vector<double> mu(rows), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * n;
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += xr[i];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= static_cast<double>(n);
    mu[r] = m;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i)
      out[r * n + i] = static_cast<T>((xr[i] - m) * rstd[r]) * gv[i] + bv[i];
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [ix, ig, ib, n, rows, mu = std::move(mu), rstd = std::move(rstd)](Tape<T>& t, int self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        const auto& gv = t.value(ig);
        const bool need_x = t.requires_grad(ix), need_g = t.requires_grad(ig), need_b = t.requires_grad(ib);
        std::vector<double> dgain(n, 0.0), dbias(n, 0.0), xhat(n), dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = xv.data() + r * n;
          const T* gr = g.data() + r * n;
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            xhat[i] = (xr[i] - mu[r]) * rstd[r];
            dxhat[i] = static_cast<double>(gr[i]) * gv[i];
            dgain[i] += gr[i] * xhat[i];
            dbias[i] += gr[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xhat[i];
          }
          if (!need_x) continue;
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          auto& gx = t.grad_buffer(ix);
          for (std::size_t i = 0; i < n; ++i)
            gx[r * n + i] += static_cast<T>(rstd[r] * (dxhat[i] - mean_d - xhat[i] * mean_dx));
        }
        if (need_g) {
          auto& gg = t.grad_buffer(ig);
          for (std::size_t i = 0; i < n; ++i) gg[i] += static_cast<T>(dgain[i]);
        }
        if (need_b) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < n; ++i) gb[i] += static_cast<T>(dbias[i]);
        }
      });
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate) at train time.
template <class T>
Var<T> dropout(Var<T> a, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const auto& av = a.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> factor(av.size());
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    factor[i] = rng.uniform01() < rate ? T{0} : keep_scale;
    out[i] = av[i] * factor[i];
  }
  const int ia = a.id();
  return a.tape().record("dropout", std::move(out), {ia}, [ia, factor = std::move(factor)](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor[i];
  });
}

// ---------------------------------------------------------------------------
// Composites.

/// Row-wise dot product of two [..., d] tensors -> [...].
template <class T>
Var<T> dot_rows(Var<T> a, Var<T> b) {
  return sum(mul(a, b), -1);
}

}  // namespace stdp::ad
