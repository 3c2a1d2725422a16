#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tfbest/tensor.hpp"

namespace tfbest::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void check_rank(const char* op, const Var<T>& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(a.shape()));
  }
}

// Element-wise unary op. `deriv(x, y)` returns dy/dx given input and output.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D deriv) {
  const Tensor<T>& x = a.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(std::move(out), {a}, [ia = a.id(), deriv](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T>& x = t.value(ia);
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

// ---- Tape -----------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(const Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Var<T> v = variable(p.value);
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
  return record(std::move(value), std::vector<Var<T>>(parents), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const auto& p : parents) {
      if (&p.tape() != this) throw Error("operation mixes variables from different tapes");
      if (nodes_[p.id()].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) {
    n.parents.reserve(parents.size());
    for (const auto& p : parents) n.parents.push_back(p.id());
    n.backward = std::move(fn);
  }
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad_of(const Var<T>& v) const {
  const Node& n = nodes_.at(v.id());
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (&root.tape() != this) throw Error("backward: root belongs to a different tape");
  if (stale_) throw Error("backward: stale tape (backward already ran)");
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + to_string(root.shape()));
  }
  stale_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  grad(root.id()).fill(T{1});
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::parameter_gradients(std::span<const Parameter<T>* const> params) const {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const Parameter<T>* p : params) {
    auto it = param_nodes_.find(p);
    if (it != param_nodes_.end() && nodes_[it->second].has_grad) {
      out.push_back(nodes_[it->second].grad);
    } else {
      out.emplace_back(p->value.shape());
    }
  }
  return out;
}

// ---- linear algebra -------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n], all row-major. Four rows of B are folded into
// each pass over a C row, which quarters the C traffic of the plain i-k-j loop.
template <typename T>
void gemm_accumulate(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c = C + i * n;
    const T* a = A + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T a0 = a[p], a1 = a[p + 1], a2 = a[p + 2], a3 = a[p + 3];
      const T* b0 = B + p * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const T ap = a[p];
      const T* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += ap * b[j];
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return out;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> C({m, n});
  gemm_accumulate(a.value().data().data(), b.value().data().data(), C.data().data(), m, k, n);
  return a.tape().record(std::move(C), {a, b}, [ia = a.id(), ib = b.id(), m, k, n](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data().data();
    if (t.requires_grad(ia)) {
      // dA += dC * B^T
      const std::vector<T> bt = transposed(t.value(ib).data().data(), k, n);
      gemm_accumulate(g, bt.data(), t.grad(ia).data().data(), m, n, k);
    }
    if (t.requires_grad(ib)) {
      // dB += A^T * dC
      const std::vector<T> at = transposed(t.value(ia).data().data(), m, k);
      gemm_accumulate(at.data(), g, t.grad(ib).data().data(), k, m, n);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  check_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const Tensor<T>& x = a.value();
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return a.tape().record(std::move(out), {a}, [ia = a.id(), m, n](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), a.value().storage());
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---- element-wise binary ------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape("add", a, b);
  const Tensor<T>& x = a.value();
  const Tensor<T>& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Tensor<T>& gx = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape("sub", a, b);
  const Tensor<T>& x = a.value();
  const Tensor<T>& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor<T>& gx = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gy = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape("mul", a, b);
  const Tensor<T>& x = a.value();
  const Tensor<T>& y = b.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ia)) {
      const Tensor<T>& y = t.value(ib);
      Tensor<T>& gx = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      const Tensor<T>& x = t.value(ia);
      Tensor<T>& gy = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary<T>(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& b) {
  if (x.shape().size() != 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1]) {
    throw ShapeError("add_row: cannot add " + to_string(b.shape()) + " to rows of " + to_string(x.shape()));
  }
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const Tensor<T>& X = x.value();
  const Tensor<T>& B = b.value();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] + B[j];
  return x.tape().record(std::move(out), {x, b}, [ix = x.id(), ib = b.id(), m, n](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ix)) {
      Tensor<T>& gx = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

template <typename T>
Var<T> mul_row(const Var<T>& x, const Var<T>& s) {
  if (x.shape().size() != 2 || s.shape().size() != 1 || s.shape()[0] != x.shape()[1]) {
    throw ShapeError("mul_row: cannot scale rows of " + to_string(x.shape()) + " by " + to_string(s.shape()));
  }
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const Tensor<T>& X = x.value();
  const Tensor<T>& S = s.value();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X[i * n + j] * S[j];
  return x.tape().record(std::move(out), {x, s}, [ix = x.id(), is = s.id(), m, n](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ix)) {
      const Tensor<T>& S = t.value(is);
      Tensor<T>& gx = t.grad(ix);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * S[j];
    }
    if (t.requires_grad(is)) {
      const Tensor<T>& X = t.value(ix);
      Tensor<T>& gs = t.grad(is);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gs[j] += g[i * n + j] * X[i * n + j];
    }
  });
}

// ---- structural ---------------------------------------------------------------

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " + to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + to_string(first) + " and " + to_string(s) + " on axis " +
                       std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    const std::size_t len = v.shape()[axis];
    for (std::size_t o = 0; o < os.outer; ++o) {
      const T* src = v.data().data() + o * len * os.inner;
      T* dst = out.data().data() + (o * os.length + offset) * os.inner;
      std::copy(src, src + len * os.inner, dst);
    }
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts.front().tape().record(
      std::move(out), parts, [ids, offsets, os, axis](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor<T>& gp = t.grad(ids[k]);
          const std::size_t len = gp.shape()[axis];
          for (std::size_t o = 0; o < os.outer; ++o) {
            const T* src = g.data().data() + (o * os.length + offsets[k]) * os.inner;
            T* dst = gp.data().data() + o * len * os.inner;
            for (std::size_t i = 0; i < len * os.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " + to_string(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  Tensor<T> out(out_shape);
  const Tensor<T>& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const T* src = x.data().data() + (o * sp.length + begin) * sp.inner;
    std::copy(src, src + len * sp.inner, out.data().data() + o * len * sp.inner);
  }
  return a.tape().record(std::move(out), {a}, [ia = a.id(), sp, begin, len](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* src = g.data().data() + o * len * sp.inner;
      T* dst = ga.data().data() + (o * sp.length + begin) * sp.inner;
      for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

// ---- reductions -----------------------------------------------------------------

template <typename T>
Var<T> sum(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  T acc{0};
  for (T v : x.data()) acc += v;
  return a.tape().record(Tensor<T>::scalar(acc), {a}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const T g = t.grad(self)[0];
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const Tensor<T>& x = a.value();
  T acc{0};
  for (T v : x.data()) acc += v;
  const T n = static_cast<T>(x.size());
  return a.tape().record(Tensor<T>::scalar(acc / n), {a}, [ia = a.id(), n](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const T g = t.grad(self)[0] / n;
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// ---- element-wise unary ----------------------------------------------------------

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  return unary<T>(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T{0.5} / y; });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  return unary<T>(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary<T>(
      a,
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  if (auto* trace = a.tape().kink_trace()) {
    for (T x : a.value().data()) trace->push_back(x > T{0} ? 1 : 0);
  }
  return unary<T>(a, [](T x) { return x > T{0} ? x : T{0}; }, [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

// ---- softmax / normalization -------------------------------------------------------

namespace {

template <typename T>
void softmax_backward(const Tensor<T>& y, const Tensor<T>& g, Tensor<T>& gx, const AxisSplit& sp) {
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.length * sp.inner + in;
      T dot{0};
      for (std::size_t k = 0; k < sp.length; ++k) {
        const std::size_t idx = base + k * sp.inner;
        dot += g[idx] * y[idx];
      }
      for (std::size_t k = 0; k < sp.length; ++k) {
        const std::size_t idx = base + k * sp.inner;
        gx[idx] += y[idx] * (g[idx] - dot);
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> softmax(const Var<T>& a, std::size_t axis) {
  if (axis >= a.shape().size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " + to_string(a.shape()));
  }
  const AxisSplit sp = split_axis(a.shape(), axis);
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.length * sp.inner + in;
      T mx = x[base];
      for (std::size_t k = 1; k < sp.length; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      T total{0};
      for (std::size_t k = 0; k < sp.length; ++k) {
        const std::size_t idx = base + k * sp.inner;
        y[idx] = std::exp(x[idx] - mx);
        total += y[idx];
      }
      for (std::size_t k = 0; k < sp.length; ++k) y[base + k * sp.inner] /= total;
    }
  }
  return a.tape().record(std::move(y), {a}, [ia = a.id(), sp](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    softmax_backward(t.value(self), t.grad(self), t.grad(ia), sp);
  });
}

template <typename T>
Var<T> masked_softmax(const Var<T>& a, const std::vector<std::uint8_t>& mask) {
  check_rank("masked_softmax", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (mask.size() != m * n) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " entries for scores " +
                     to_string(a.shape()));
  }
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t row = i * n;
    bool any = false;
    T mx{0};
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[row + j]) continue;
      mx = any ? std::max(mx, x[row + j]) : x[row + j];
      any = true;
    }
    if (!any) throw Error("attention: query row " + std::to_string(i) + " has no attendable key");
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[row + j]) continue;
      y[row + j] = std::exp(x[row + j] - mx);
      total += y[row + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[row + j] /= total;
  }
  const AxisSplit sp{m, n, 1};
  return a.tape().record(std::move(y), {a}, [ia = a.id(), sp](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    // Masked entries have y == 0, so they receive exactly zero gradient.
    softmax_backward(t.value(self), t.grad(self), t.grad(ia), sp);
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& a, T eps) {
  if (a.shape().empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.value().size() / n;
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * n;
    T mu{0};
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = (xr[j] - mu) * rstd[r];
  }
  return a.tape().record(std::move(y), {a}, [ia = a.id(), n, rows, rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      T gmean{0}, gymean{0};
      for (std::size_t j = 0; j < n; ++j) {
        gmean += g[base + j];
        gymean += g[base + j] * y[base + j];
      }
      gmean /= static_cast<T>(n);
      gymean /= static_cast<T>(n);
      for (std::size_t j = 0; j < n; ++j) {
        gx[base + j] += rstd[r] * (g[base + j] - gmean - y[base + j] * gymean);
      }
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T>& a, T p, bool training, std::mt19937_64& rng) {
  if (!(p >= T{0} && p < T{1})) throw std::invalid_argument("dropout: p must lie in [0,1)");
  if (!training || p == T{0}) return a;
  const Tensor<T>& x = a.value();
  const T keep_scale = T{1} / (T{1} - p);
  std::vector<T> mask(x.size());
  for (auto& m : mask) {
    // 53-bit uniform in [0,1); avoids distribution implementation differences.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < static_cast<double>(p) ? T{0} : keep_scale;
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return a.tape().record(std::move(out), {a}, [ia = a.id(), mask = std::move(mask)](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> rmse_loss(const Var<T>& pred, const Var<T>& target, T delta) {
  check_same_shape("rmse_loss", pred, target);
  const Tensor<T>& p = pred.value();
  const Tensor<T>& y = target.value();
  const std::size_t n = p.size();
  T sse{0};
  for (std::size_t i = 0; i < n; ++i) sse += (p[i] - y[i]) * (p[i] - y[i]);
  const T loss = std::sqrt(sse / static_cast<T>(n) + delta);
  return pred.tape().record(
      Tensor<T>::scalar(loss), {pred, target}, [ip = pred.id(), it = target.id(), n](Tape<T>& t, std::size_t self) {
        const T out = t.value(self)[0];
        // The gradient is undefined at exactly zero loss; report zero there.
        if (out == T{0}) return;
        const T coef = t.grad(self)[0] / (static_cast<T>(n) * out);
        const Tensor<T>& p = t.value(ip);
        const Tensor<T>& y = t.value(it);
        if (t.requires_grad(ip)) {
          Tensor<T>& gp = t.grad(ip);
          for (std::size_t i = 0; i < n; ++i) gp[i] += coef * (p[i] - y[i]);
        }
        if (t.requires_grad(it)) {
          Tensor<T>& gy = t.grad(it);
          for (std::size_t i = 0; i < n; ++i) gy[i] -= coef * (p[i] - y[i]);
        }
      });
}

#define TFBEST_INSTANTIATE_AD(T)                                                              \
  template class Tape<T>;                                                                     \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul_row(const Var<T>&, const Var<T>&);                                      \
  template Var<T> transpose(const Var<T>&);                                                   \
  template Var<T> reshape(const Var<T>&, Shape);                                              \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                            \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);               \
  template Var<T> sum(const Var<T>&);                                                         \
  template Var<T> mean(const Var<T>&);                                                        \
  template Var<T> sqrt(const Var<T>&);                                                        \
  template Var<T> tanh(const Var<T>&);                                                        \
  template Var<T> sigmoid(const Var<T>&);                                                     \
  template Var<T> relu(const Var<T>&);                                                        \
  template Var<T> softmax(const Var<T>&, std::size_t);                                        \
  template Var<T> masked_softmax(const Var<T>&, const std::vector<std::uint8_t>&);            \
  template Var<T> layer_norm(const Var<T>&, T);                                               \
  template Var<T> dropout(const Var<T>&, T, bool, std::mt19937_64&);                          \
  template Var<T> rmse_loss(const Var<T>&, const Var<T>&, T);

TFBEST_INSTANTIATE_AD(float)
TFBEST_INSTANTIATE_AD(double)

}  // namespace tfbest::ad
