// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Every value is row-major. A Tape records one forward pass; backward()
// replays it in exact reverse order. Tensors are immutable after creation
// except for their grad buffers (and explicit set_value, used by the
// finite-difference checker and by initializers).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace comgnn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape

class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }
  // Inputs of each recorded op precede it, so one reverse sweep suffices.
  void backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

// Activates a tape for the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(active_tape()) { active_tape() = &tape; }
  ~TapeScope() { active_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Suppresses recording (pure evaluation), e.g. for finite differences.
class NoGradScope {
 public:
  NoGradScope() : prev_(active_tape()) { active_tape() = nullptr; }
  ~NoGradScope() { active_tape() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

// ---------------------------------------------------------------------------
// Tensor

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_->data.assign(shape_numel(shape), 0.0);
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                  std::to_string(values.size()) + " values");
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }

  const std::vector<double>& values() const { return impl_->data; }
  double value_at(std::size_t i) const { return impl_->data.at(i); }
  double item() const {
    if (numel() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Gradient accumulated by the last backward(); zeros if none flowed.
  const std::vector<double>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  // Out-of-band mutation for initializers / finite differences.
  void set_value(std::size_t i, double v) { impl_->data.at(i) = v; }
  void set_values(const std::vector<double>& vals) {
    if (vals.size() != impl_->data.size())
      throw std::invalid_argument("set_values: size mismatch");
    impl_->data = vals;
  }

  detail::ImplPtr impl() const { return impl_; }

 private:
  detail::ImplPtr impl_;
};

namespace detail {

inline bool track(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline void mark_output(Tensor& out) { out.set_requires_grad(true); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Stable scalar kernels

// softplus: x + log1p(exp(-x)) for large x, exp(x) tail for very negative x.
inline double softplus(double x) {
  if (x > 20.0) return x + std::log1p(std::exp(-x));
  if (x < -20.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double mish_scalar(double x) { return x * std::tanh(softplus(x)); }

inline double mish_grad_scalar(double x) {
  const double t = std::tanh(softplus(x));
  return t + x * (1.0 - t * t) * sigmoid_scalar(x);
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = Tensor::zeros(x.shape());
  auto xi = x.impl();
  auto oi = out.impl();
  for (std::size_t i = 0; i < xi->data.size(); ++i) oi->data[i] = fwd(xi->data[i]);
  if (track({&x})) {
    mark_output(out);
    active_tape()->record([xi, oi, bwd] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += oi->grad[i] * bwd(xi->data[i]);
    });
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t i = 0; i < ai->data.size(); ++i) oi->data[i] = ai->data[i] + bi->data[i];
  if (detail::track({&a, &b})) {
    detail::mark_output(out);
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([ai, bi, oi, ga, gb] {
      if (oi->grad.empty()) return;
      if (ga) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (gb) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t i = 0; i < ai->data.size(); ++i) oi->data[i] = ai->data[i] - bi->data[i];
  if (detail::track({&a, &b})) {
    detail::mark_output(out);
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([ai, bi, oi, ga, gb] {
      if (oi->grad.empty()) return;
      if (ga) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (gb) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t i = 0; i < ai->data.size(); ++i) oi->data[i] = ai->data[i] * bi->data[i];
  if (detail::track({&a, &b})) {
    detail::mark_output(out);
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([ai, bi, oi, ga, gb] {
      if (oi->grad.empty()) return;
      if (ga) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (gb) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return c * v; }, [c](double) { return c; });
}

inline Tensor mish(const Tensor& x) {
  return detail::unary_op(x, mish_scalar, mish_grad_scalar);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(x, sigmoid_scalar, [](double v) {
    const double s = sigmoid_scalar(v);
    return s * (1.0 - s);
  });
}

inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  if (!(slope > 0.0 && slope < 1.0))
    throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
  return detail::unary_op(
      x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v) { return v >= 0.0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// matmul / linear

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai->data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &bi->data[p * n];
      double* orow = &oi->data[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  if (detail::track({&a, &b})) {
    detail::mark_output(out);
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([ai, bi, oi, m, k, n, ga, gb] {
      if (oi->grad.empty()) return;
      if (ga) {  // dA = g . B^T
        ai->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = &oi->grad[i * n];
            const double* brow = &bi->data[p * n];
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ai->grad[i * k + p] += acc;
          }
      }
      if (gb) {  // dB = A^T . g
        bi->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ai->data[i * k + p];
            if (av == 0.0) continue;
            const double* grow = &oi->grad[i * n];
            double* brow = &bi->grad[p * n];
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

// y = x . W^T + b, the batched affine map used throughout the model.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) ||
      w.dim(0) != b.dim(0))
    throw std::invalid_argument("linear: incompatible shapes x=" + shape_str(x.shape()) +
                                " W=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  Tensor out = Tensor::zeros({n, out_dim});
  auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xrow = &xi->data[i * in];
    double* orow = &oi->data[i * out_dim];
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wrow = &wi->data[o * in];
      double acc = bi->data[o];
      for (std::size_t p = 0; p < in; ++p) acc += wrow[p] * xrow[p];
      orow[o] = acc;
    }
  }
  if (detail::track({&x, &w, &b})) {
    detail::mark_output(out);
    bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
    active_tape()->record([xi, wi, bi, oi, n, in, out_dim, gx, gw, gb] {
      if (oi->grad.empty()) return;
      if (gx) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = &oi->grad[i * out_dim];
          double* xrow = &xi->grad[i * in];
          for (std::size_t o = 0; o < out_dim; ++o) {
            const double g = grow[o];
            if (g == 0.0) continue;
            const double* wrow = &wi->data[o * in];
            for (std::size_t p = 0; p < in; ++p) xrow[p] += g * wrow[p];
          }
        }
      }
      if (gw) {
        wi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = &oi->grad[i * out_dim];
          const double* xrow = &xi->data[i * in];
          for (std::size_t o = 0; o < out_dim; ++o) {
            const double g = grow[o];
            if (g == 0.0) continue;
            double* wrow = &wi->grad[o * in];
            for (std::size_t p = 0; p < in; ++p) wrow[p] += g * xrow[p];
          }
        }
      }
      if (gb) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out_dim; ++o) bi->grad[o] += oi->grad[i * out_dim + o];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " +
                                shape_str(new_shape) + " changes element count");
  Tensor out = Tensor::from(std::move(new_shape), x.values());
  auto xi = x.impl(), oi = out.impl();
  if (detail::track({&x})) {
    detail::mark_output(out);
    active_tape()->record([xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
  Shape out_shape = s0;
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size())
      throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d])
        throw std::invalid_argument("concat: non-concat dims differ " + shape_str(s0) + " vs " +
                                    shape_str(s));
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  // outer = product of dims before axis, inner = product after.
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  Tensor out = Tensor::zeros(out_shape);
  auto oi = out.impl();
  const std::size_t out_stride = axis_total * inner;
  std::size_t axis_off = 0;
  bool any_grad = false;
  struct Piece {
    detail::ImplPtr impl;
    std::size_t axis_len, offset;
    bool grad;
  };
  std::vector<Piece> pieces;
  pieces.reserve(parts.size());
  for (const Tensor& p : parts) {
    const std::size_t alen = p.dim(axis);
    auto pi = p.impl();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&pi->data[o * alen * inner], alen * inner,
                  &oi->data[o * out_stride + axis_off * inner]);
    pieces.push_back({pi, alen, axis_off, p.requires_grad()});
    any_grad = any_grad || p.requires_grad();
    axis_off += alen;
  }
  if (active_tape() && any_grad) {
    detail::mark_output(out);
    active_tape()->record([oi, pieces, outer, inner, out_stride] {
      if (oi->grad.empty()) return;
      for (const Piece& pc : pieces) {
        if (!pc.grad) continue;
        pc.impl->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = &oi->grad[o * out_stride + pc.offset * inner];
          double* dst = &pc.impl->grad[o * pc.axis_len * inner];
          for (std::size_t i = 0; i < pc.axis_len * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

inline Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis])
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") invalid for " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Tensor out = Tensor::zeros(out_shape);
  auto xi = x.impl(), oi = out.impl();
  const std::size_t in_stride = s[axis] * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(&xi->data[o * in_stride + start * inner], len * inner, &oi->data[o * len * inner]);
  if (detail::track({&x})) {
    detail::mark_output(out);
    active_tape()->record([xi, oi, outer, inner, in_stride, start, len] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = &oi->grad[o * len * inner];
        double* dst = &xi->grad[o * in_stride + start * inner];
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// out[i,:] = x[indices[i],:]; backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
  if (x.rank() != 2) throw std::invalid_argument("gather_rows: want matrix, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = Tensor::zeros({indices.size(), cols});
  auto xi = x.impl(), oi = out.impl();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows)
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " >= " +
                              std::to_string(rows));
    std::copy_n(&xi->data[indices[i] * cols], cols, &oi->data[i * cols]);
  }
  if (detail::track({&x})) {
    detail::mark_output(out);
    active_tape()->record([xi, oi, indices, cols] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = &oi->grad[i * cols];
        double* dst = &xi->grad[indices[i] * cols];
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment ops (deterministic: accumulation in ascending input-row order)

inline Tensor segment_sum(const Tensor& values, const std::vector<std::size_t>& segment_ids,
                          std::size_t num_segments) {
  if (values.rank() != 1 && values.rank() != 2)
    throw std::invalid_argument("segment_sum: want vector or matrix");
  const std::size_t n = values.dim(0);
  const std::size_t d = values.rank() == 2 ? values.dim(1) : 1;
  if (segment_ids.size() != n)
    throw std::invalid_argument("segment_sum: ids length " + std::to_string(segment_ids.size()) +
                                " != rows " + std::to_string(n));
  for (std::size_t id : segment_ids)
    if (id >= num_segments)
      throw std::out_of_range("segment_sum: id " + std::to_string(id) + " >= " +
                              std::to_string(num_segments));
  Shape out_shape = values.rank() == 2 ? Shape{num_segments, d} : Shape{num_segments};
  Tensor out = Tensor::zeros(out_shape);
  auto vi = values.impl(), oi = out.impl();
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = &oi->data[segment_ids[i] * d];
    const double* src = &vi->data[i * d];
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  if (detail::track({&values})) {
    detail::mark_output(out);
    active_tape()->record([vi, oi, segment_ids, d] {
      if (oi->grad.empty()) return;
      vi->ensure_grad();
      for (std::size_t i = 0; i < segment_ids.size(); ++i) {
        const double* src = &oi->grad[segment_ids[i] * d];
        double* dst = &vi->grad[i * d];
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

// Softmax within each segment, max-shifted for stability.
inline Tensor segment_softmax(const Tensor& scores, const std::vector<std::size_t>& segment_ids) {
  if (scores.rank() != 1) throw std::invalid_argument("segment_softmax: want vector of scores");
  const std::size_t n = scores.dim(0);
  if (segment_ids.size() != n)
    throw std::invalid_argument("segment_softmax: ids length mismatch");
  std::size_t num_segments = 0;
  for (std::size_t id : segment_ids) num_segments = std::max(num_segments, id + 1);

  auto si = scores.impl();
  for (double v : si->data)
    if (!std::isfinite(v)) throw std::domain_error("segment_softmax: non-finite score");

  std::vector<double> seg_max(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    seg_max[segment_ids[i]] = std::max(seg_max[segment_ids[i]], si->data[i]);
  Tensor out = Tensor::zeros({n});
  auto oi = out.impl();
  std::vector<double> seg_sum(num_segments, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    oi->data[i] = std::exp(si->data[i] - seg_max[segment_ids[i]]);
    seg_sum[segment_ids[i]] += oi->data[i];
  }
  for (std::size_t i = 0; i < n; ++i) oi->data[i] /= seg_sum[segment_ids[i]];

  if (detail::track({&scores})) {
    detail::mark_output(out);
    active_tape()->record([si, oi, segment_ids, num_segments] {
      if (oi->grad.empty()) return;
      si->ensure_grad();
      // d beta_i = alpha_i * (g_i - sum_j alpha_j g_j) within the segment
      std::vector<double> seg_dot(num_segments, 0.0);
      for (std::size_t i = 0; i < segment_ids.size(); ++i)
        seg_dot[segment_ids[i]] += oi->data[i] * oi->grad[i];
      for (std::size_t i = 0; i < segment_ids.size(); ++i)
        si->grad[i] += oi->data[i] * (oi->grad[i] - seg_dot[segment_ids[i]]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row-batched ops

// out[i,:] = w[i] * v[i,:]
inline Tensor scale_rows(const Tensor& values, const Tensor& weights) {
  if (values.rank() != 2 || weights.rank() != 1 || values.dim(0) != weights.dim(0))
    throw std::invalid_argument("scale_rows: shapes " + shape_str(values.shape()) + " and " +
                                shape_str(weights.shape()));
  const std::size_t n = values.dim(0), d = values.dim(1);
  Tensor out = Tensor::zeros({n, d});
  auto vi = values.impl(), wi = weights.impl(), oi = out.impl();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) oi->data[i * d + c] = wi->data[i] * vi->data[i * d + c];
  if (detail::track({&values, &weights})) {
    detail::mark_output(out);
    bool gv = values.requires_grad(), gw = weights.requires_grad();
    active_tape()->record([vi, wi, oi, n, d, gv, gw] {
      if (oi->grad.empty()) return;
      if (gv) vi->ensure_grad();
      if (gw) wi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) {
          const double g = oi->grad[i * d + c];
          if (gv) vi->grad[i * d + c] += g * wi->data[i];
          if (gw) wi->grad[i] += g * vi->data[i * d + c];
        }
    });
  }
  return out;
}

// out[i] = dot(a[i,:], b[i,:])
inline Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "rowwise_dot");
  if (a.rank() != 2) throw std::invalid_argument("rowwise_dot: want matrices");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({n});
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += ai->data[i * d + c] * bi->data[i * d + c];
    oi->data[i] = acc;
  }
  if (detail::track({&a, &b})) {
    detail::mark_output(out);
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([ai, bi, oi, n, d, ga, gb] {
      if (oi->grad.empty()) return;
      if (ga) ai->ensure_grad();
      if (gb) bi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double g = oi->grad[i];
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          if (ga) ai->grad[i * d + c] += g * bi->data[i * d + c];
          if (gb) bi->grad[i * d + c] += g * ai->data[i * d + c];
        }
      }
    });
  }
  return out;
}

// Per-row matrix-vector product: mats[i] is a p x q matrix stored flat,
// out[i,:] = mats[i] . vecs[i,:]. Used for per-edge attention transforms.
inline Tensor rows_matvec(const Tensor& mats, const Tensor& vecs, std::size_t p) {
  if (mats.rank() != 2 || vecs.rank() != 2 || mats.dim(0) != vecs.dim(0))
    throw std::invalid_argument("rows_matvec: row counts differ");
  const std::size_t n = mats.dim(0), q = vecs.dim(1);
  if (mats.dim(1) != p * q)
    throw std::invalid_argument("rows_matvec: mats width " + std::to_string(mats.dim(1)) +
                                " != " + std::to_string(p) + "*" + std::to_string(q));
  Tensor out = Tensor::zeros({n, p});
  auto mi = mats.impl(), vi = vecs.impl(), oi = out.impl();
  for (std::size_t i = 0; i < n; ++i) {
    const double* m = &mi->data[i * p * q];
    const double* v = &vi->data[i * q];
    double* o = &oi->data[i * p];
    for (std::size_t r = 0; r < p; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < q; ++c) acc += m[r * q + c] * v[c];
      o[r] = acc;
    }
  }
  if (detail::track({&mats, &vecs})) {
    detail::mark_output(out);
    bool gm = mats.requires_grad(), gv = vecs.requires_grad();
    active_tape()->record([mi, vi, oi, n, p, q, gm, gv] {
      if (oi->grad.empty()) return;
      if (gm) mi->ensure_grad();
      if (gv) vi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = &oi->grad[i * p];
        const double* v = &vi->data[i * q];
        const double* m = &mi->data[i * p * q];
        for (std::size_t r = 0; r < p; ++r) {
          if (g[r] == 0.0) continue;
          for (std::size_t c = 0; c < q; ++c) {
            if (gm) mi->grad[i * p * q + r * q + c] += g[r] * v[c];
            if (gv) vi->grad[i * q + c] += g[r] * m[r * q + c];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// GLU and temporal convolution

// Split the last axis into halves (a, b); output a * sigmoid(b).
inline Tensor glu(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() % 2 != 0)
    throw std::invalid_argument("glu: last dim of " + shape_str(s) + " must be even");
  const std::size_t c = s.back() / 2;
  std::size_t outer = x.numel() / s.back();
  Shape out_shape = s;
  out_shape.back() = c;
  Tensor out = Tensor::zeros(out_shape);
  auto xi = x.impl(), oi = out.impl();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* a = &xi->data[o * 2 * c];
    const double* b = a + c;
    double* dst = &oi->data[o * c];
    for (std::size_t j = 0; j < c; ++j) dst[j] = a[j] * sigmoid_scalar(b[j]);
  }
  if (detail::track({&x})) {
    detail::mark_output(out);
    active_tape()->record([xi, oi, outer, c] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* a = &xi->data[o * 2 * c];
        const double* b = a + c;
        const double* g = &oi->grad[o * c];
        double* da = &xi->grad[o * 2 * c];
        double* db = da + c;
        for (std::size_t j = 0; j < c; ++j) {
          const double sb = sigmoid_scalar(b[j]);
          da[j] += g[j] * sb;
          db[j] += g[j] * a[j] * sb * (1.0 - sb);
        }
      }
    });
  }
  return out;
}

// x [... x c] + b [c], broadcast over all leading axes.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.rank() == 0 || x.shape().back() != b.dim(0))
    throw std::invalid_argument("add_channel_bias: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t c = b.dim(0), outer = x.numel() / std::max<std::size_t>(c, 1);
  Tensor out = Tensor::zeros(x.shape());
  auto xi = x.impl(), bi = b.impl(), oi = out.impl();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < c; ++j) oi->data[o * c + j] = xi->data[o * c + j] + bi->data[j];
  if (detail::track({&x, &b})) {
    detail::mark_output(out);
    bool gx = x.requires_grad(), gb = b.requires_grad();
    active_tape()->record([xi, bi, oi, outer, c, gx, gb] {
      if (oi->grad.empty()) return;
      if (gx) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
      }
      if (gb) {
        bi->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < c; ++j) bi->grad[j] += oi->grad[o * c + j];
      }
    });
  }
  return out;
}

// Valid 1-D convolution over the leading (time) axis, kernel shared by all
// N entities: x [T x N x c_in], kernel [K x c_in x c_out] -> [(T-K+1) x N x c_out].
inline Tensor conv1d_time(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 3 || kernel.rank() != 3 || x.dim(2) != kernel.dim(1))
    throw std::invalid_argument("conv1d_time: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(kernel.shape()));
  const std::size_t t_in = x.dim(0), n = x.dim(1), ci = x.dim(2);
  const std::size_t k = kernel.dim(0), co = kernel.dim(2);
  if (t_in < k)
    throw std::invalid_argument("conv1d_time: series length " + std::to_string(t_in) +
                                " shorter than kernel " + std::to_string(k));
  const std::size_t t_out = t_in - k + 1;
  Tensor out = Tensor::zeros({t_out, n, co});
  auto xi = x.impl(), ki = kernel.impl(), oi = out.impl();
  for (std::size_t t = 0; t < t_out; ++t)
    for (std::size_t e = 0; e < n; ++e) {
      double* orow = &oi->data[(t * n + e) * co];
      for (std::size_t dk = 0; dk < k; ++dk) {
        const double* xrow = &xi->data[((t + dk) * n + e) * ci];
        const double* krow = &ki->data[dk * ci * co];
        for (std::size_t i = 0; i < ci; ++i) {
          const double xv = xrow[i];
          if (xv == 0.0) continue;
          const double* kr = &krow[i * co];
          for (std::size_t o = 0; o < co; ++o) orow[o] += xv * kr[o];
        }
      }
    }
  if (detail::track({&x, &kernel})) {
    detail::mark_output(out);
    bool gx = x.requires_grad(), gk = kernel.requires_grad();
    active_tape()->record([xi, ki, oi, t_out, n, ci, k, co, gx, gk] {
      if (oi->grad.empty()) return;
      if (gx) xi->ensure_grad();
      if (gk) ki->ensure_grad();
      for (std::size_t t = 0; t < t_out; ++t)
        for (std::size_t e = 0; e < n; ++e) {
          const double* grow = &oi->grad[(t * n + e) * co];
          for (std::size_t dk = 0; dk < k; ++dk) {
            const std::size_t xoff = ((t + dk) * n + e) * ci;
            const std::size_t koff = dk * ci * co;
            for (std::size_t i = 0; i < ci; ++i) {
              double acc = 0.0;
              for (std::size_t o = 0; o < co; ++o) {
                const double g = grow[o];
                if (g == 0.0) continue;
                acc += g * ki->data[koff + i * co + o];
                if (gk) ki->grad[koff + i * co + o] += g * xi->data[xoff + i];
              }
              if (gx) xi->grad[xoff + i] += acc;
            }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(std::accumulate(x.values().begin(), x.values().end(), 0.0));
  auto xi = x.impl(), oi = out.impl();
  if (detail::track({&x})) {
    detail::mark_output(out);
    active_tape()->record([xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (double& g : xi->grad) g += oi->grad[0];
    });
  }
  return out;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor sumsq(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  Tensor out = Tensor::scalar(acc);
  auto xi = x.impl(), oi = out.impl();
  if (detail::track({&x})) {
    detail::mark_output(out);
    active_tape()->record([xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += 2.0 * oi->grad[0] * xi->data[i];
    });
  }
  return out;
}

// -sum(y_i * log softmax(s)_i) with y a fixed distribution over candidates.
inline Tensor softmax_cross_entropy(const Tensor& scores, const std::vector<double>& target) {
  if (scores.rank() != 1 || scores.dim(0) != target.size())
    throw std::invalid_argument("softmax_cross_entropy: scores " + shape_str(scores.shape()) +
                                " vs target size " + std::to_string(target.size()));
  auto si = scores.impl();
  const std::size_t n = target.size();
  const double m = *std::max_element(si->data.begin(), si->data.end());
  double z = 0.0;
  for (double v : si->data) z += std::exp(v - m);
  const double logz = std::log(z) + m;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss += target[i] * (logz - si->data[i]);
  Tensor out = Tensor::scalar(loss);
  auto oi = out.impl();
  if (detail::track({&scores})) {
    detail::mark_output(out);
    active_tape()->record([si, oi, target, logz, n] {
      if (oi->grad.empty()) return;
      si->ensure_grad();
      const double g = oi->grad[0];
      for (std::size_t i = 0; i < n; ++i)
        si->grad[i] += g * (std::exp(si->data[i] - logz) - target[i]);
    });
  }
  return out;
}

// mean over entries of |pred - target| / max(target, eps)
inline Tensor mape_mean(const Tensor& pred, const std::vector<double>& target, double eps) {
  if (pred.numel() != target.size())
    throw std::invalid_argument("mape_mean: size mismatch");
  auto pi = pred.impl();
  const std::size_t n = target.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::abs(pi->data[i] - target[i]) / std::max(target[i], eps);
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  auto oi = out.impl();
  if (detail::track({&pred})) {
    detail::mark_output(out);
    active_tape()->record([pi, oi, target, eps, n] {
      if (oi->grad.empty()) return;
      pi->ensure_grad();
      const double g = oi->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = pi->data[i] - target[i];
        const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        pi->grad[i] += g * sgn / std::max(target[i], eps);
      }
    });
  }
  return out;
}

inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) throw std::logic_error("backward: loss must be scalar");
  auto li = loss.impl();
  li->ensure_grad();
  li->grad[0] = 1.0;
  tape.backward();
}

// ---------------------------------------------------------------------------
// RNG and initialization

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return gen_(); }
  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  double normal() {
    // Box-Muller; cache the second deviate for determinism independent of libstdc++.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline Tensor glorot_param(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> vals(shape_numel(shape));
  for (double& v : vals) v = rng.uniform(-s, s);
  return Tensor::param(std::move(shape), std::move(vals));
}

inline Tensor zero_param(Shape shape) {
  return Tensor::param(std::move(shape), std::vector<double>(shape_numel(shape), 0.0));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker

// Max over coordinates of |analytic - central difference| / max(1, |a|, |n|).
// f must be evaluable repeatedly; it is called without a tape for the
// numeric probes and with a fresh tape once for the analytic gradient.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                         double h = 1e-5) {
  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(x);
    if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: non-finite loss");
    backward(loss, tape);
    analytic = x.grad();
  }
  double max_rel = 0.0;
  {
    NoGradScope no_grad;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double orig = x.value_at(i);
      x.set_value(i, orig + h);
      const double up = f(x).item();
      x.set_value(i, orig - h);
      const double down = f(x).item();
      x.set_value(i, orig);
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::domain_error("grad_check: non-finite probe value");
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
  }
  x.set_requires_grad(had_grad);
  return max_rel;
}

}  // namespace comgnn
