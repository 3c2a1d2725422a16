#pragma once

// Dense row-major tensors and a reverse-mode differentiation tape.
//
// A Tape records every operation applied to Vars created from it. Values are
// computed eagerly; Tape::backward walks the recorded nodes in reverse id
// order (ids are assigned in creation order, so parents always precede their
// children) and accumulates gradients. Tapes are single-use: once backward has
// run, the tape is stale.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tfbest/errors.hpp"

namespace tfbest::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{}, data_(1, T{0}) {}

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_dims();
    data_.assign(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_dims();
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-d element access; no bounds checks beyond the debug-mode vector ones.
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void validate_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

// A named trainable tensor. Tapes refer to parameters by address, so a
// parameter must outlive any tape it was registered with.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const noexcept { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  // Called with the tape and the id of the node whose gradient is complete.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  // With grad_enabled == false nothing but values is recorded, which is what
  // evaluation wants.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var<T> constant(Tensor<T> value);
  // A leaf that receives a gradient; used for input-gradient checks.
  Var<T> variable(Tensor<T> value);
  // Registers a parameter as a leaf. Repeated calls return the same node.
  Var<T> parameter(const Parameter<T>& p);

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn);

  void backward(const Var<T>& root);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient accumulator for node id, zero-allocated on first access.
  Tensor<T>& grad(std::size_t id);
  // Gradient of a node after backward; zeros if nothing flowed into it.
  Tensor<T> grad_of(const Var<T>& v) const;

  // Gradients for the given parameters in order; zeros for parameters that
  // were never registered or received no gradient.
  std::vector<Tensor<T>> parameter_gradients(std::span<const Parameter<T>* const> params) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool stale() const noexcept { return stale_; }

  // When set, ops with a kink (relu) append one byte per element recording
  // which side of the kink the input fell on. Gradient checks compare these
  // traces to spot finite-difference steps that cross a kink.
  void set_kink_trace(std::vector<std::uint8_t>* trace) noexcept { kink_trace_ = trace; }
  std::vector<std::uint8_t>* kink_trace() const noexcept { return kink_trace_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor<T> grad;
  };

  Var<T> push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool grad_enabled_ = true;
  bool stale_ = false;
  std::vector<std::uint8_t>* kink_trace_ = nullptr;
};

// ---- operations -----------------------------------------------------------
// All ops check shapes and throw ShapeError naming the offending shapes.

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
// x [m,n] + b [n] (row-wise bias); the only broadcasting supported.
template <typename T> Var<T> add_row(const Var<T>& x, const Var<T>& b);
// x [m,n] * g [n], row-wise scaling for affine layer norm.
template <typename T> Var<T> mul_row(const Var<T>& x, const Var<T>& g);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> relu(const Var<T>& a);
template <typename T> Var<T> softmax(const Var<T>& a, std::size_t axis);

// Row softmax of a [m,n] score matrix where mask[i*n+j] == 0 marks a key
// that row i may not attend to. Masked weights are exactly zero. A row with
// no attendable key is an error.
template <typename T> Var<T> masked_softmax(const Var<T>& a, const std::vector<std::uint8_t>& mask);

// Normalizes each slice along the last axis to zero mean and unit variance
// (biased variance, eps inside the square root). No affine part.
template <typename T> Var<T> layer_norm(const Var<T>& a, T eps);

// Inverted dropout: kept units are scaled by 1/(1-p). Identity when
// training is false or p == 0.
template <typename T> Var<T> dropout(const Var<T>& a, T p, bool training, std::mt19937_64& rng);

// sqrt(mean((pred-target)^2) + delta). delta > 0 removes the singular
// gradient at zero loss.
template <typename T> Var<T> rmse_loss(const Var<T>& pred, const Var<T>& target, T delta = T{0});

}  // namespace tfbest::ad
