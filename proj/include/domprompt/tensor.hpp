#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace domprompt {

enum class Precision : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Shape or rank disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside an operation's mathematical domain (e.g. log of x <= 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of the gradient tape (non-scalar loss, second backward, ...).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Flat storage in one of the two supported precisions.
struct Buffer {
  std::vector<float> f32;
  std::vector<double> f64;

  template <class T>
  std::vector<T>& get() {
    if constexpr (std::is_same_v<T, float>) {
      return f32;
    } else {
      return f64;
    }
  }
  template <class T>
  const std::vector<T>& get() const {
    if constexpr (std::is_same_v<T, float>) {
      return f32;
    } else {
      return f64;
    }
  }
  bool empty() const { return f32.empty() && f64.empty(); }
};

struct TensorImpl {
  Shape shape;
  Precision precision = Precision::f32;
  Buffer data;
  bool requires_grad = false;
  std::uint64_t tape_serial = 0;
  std::size_t node = static_cast<std::size_t>(-1);
};

template <class T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

/// Calls `f.template operator()<T>()` with T = float or double.
template <class F>
decltype(auto) visit_precision(Precision p, F&& f) {
  if (p == Precision::f32) return std::forward<F>(f).template operator()<float>();
  return std::forward<F>(f).template operator()<double>();
}

/// N-dimensional value with an optional node on the active gradient tape.
///
/// Copies share storage. Values are immutable once produced by an operation;
/// only leaf tensors (parameters) are written in place, by the optimizer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Precision precision = Precision::f32);
  static Tensor full(Shape shape, double value, Precision precision = Precision::f32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            Precision precision = Precision::f32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            Precision precision = Precision::f32);
  static Tensor from_buffer(Shape shape, std::vector<float> values);
  static Tensor from_buffer(Shape shape, std::vector<double> values);
  static Tensor scalar(double value, Precision precision = Precision::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  Precision precision() const { return impl_->precision; }

  template <class T>
  std::span<const T> data() const {
    check_precision(precision_of<T>());
    return impl_->data.get<T>();
  }

  /// Writable view; only allowed on leaves that no tape node depends on.
  template <class T>
  std::span<T> mutable_data() {
    check_precision(precision_of<T>());
    check_writable();
    return impl_->data.get<T>();
  }

  std::vector<double> values() const;
  double item() const;
  double at(std::size_t flat_index) const;

  /// Detached copy converted to `precision`.
  Tensor cast(Precision precision) const;
  /// Detached copy; never receives gradient.
  Tensor detach() const;
  /// Deep copy keeping the requires_grad flag (used to clone parameters).
  Tensor clone() const;

  /// Marks a leaf as trainable: the tape accumulates a gradient for it.
  Tensor& set_requires_grad(bool value);
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  /// True while the tensor is the output of a node on the active tape.
  bool on_tape() const;

  const TensorImpl* id() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  void check_precision(Precision p) const;
  void check_writable() const;

  std::shared_ptr<TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_tensor(Shape shape, Precision precision);
};

/// Allocates a zero-filled result tensor (for operation implementations).
Tensor make_tensor(Shape shape, Precision precision);

class GradContext;
using BackwardFn = std::function<void(GradContext&)>;

/// Ordered record of differentiable operations. Nodes are appended in
/// execution order, so parents always precede children.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse pass from a one-element loss. Visits every node once; a second
  /// call on the same tape throws TapeError.
  void backward(const Tensor& loss);

  bool has_grad(const Tensor& t) const;
  /// Gradient of the last backward pass w.r.t. `t` (leaf or intermediate).
  Tensor grad(const Tensor& t) const;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t serial() const { return serial_; }

  /// True when `t` participates in differentiation on this tape.
  bool tracks(const Tensor& t) const;

  /// Appends a node producing `output` from `inputs`.
  void record(Tensor& output, std::span<const Tensor> inputs, BackwardFn fn);

 private:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<bool> tracked;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  struct LeafGrad {
    std::shared_ptr<TensorImpl> leaf;
    Buffer grad;
  };

  Buffer* grad_slot(const std::shared_ptr<TensorImpl>& t, bool create);
  const Buffer* find_grad(const TensorImpl* t) const;

  std::vector<Node> nodes_;
  std::vector<Buffer> node_grads_;
  std::unordered_map<const TensorImpl*, LeafGrad> leaf_grads_;
  std::uint64_t serial_;
  bool consumed_ = false;

  friend class GradContext;
};

/// View handed to a node's backward function.
class GradContext {
 public:
  template <class T>
  std::span<const T> out_grad() const {
    return out_grad_->get<T>();
  }
  /// Accumulation target for input `i`; empty when the input takes no gradient.
  template <class T>
  std::span<T> in_grad(std::size_t i) {
    Buffer* b = input_grad(i);
    if (b == nullptr) return {};
    return b->get<T>();
  }
  bool needs(std::size_t i) const { return node_->tracked[i]; }

 private:
  GradContext(Tape& tape, const Tape::Node* node, const Buffer* out_grad)
      : tape_(tape), node_(node), out_grad_(out_grad) {}
  Buffer* input_grad(std::size_t i);

  Tape& tape_;
  const Tape::Node* node_;
  const Buffer* out_grad_;
  friend class Tape;
};

/// Tape used by operations on this thread; null when not recording.
Tape* active_tape();

/// Makes `tape` the recording tape for the current scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Records `fn` on the active tape when any input is tracked.
void record_op(Tensor& output, std::initializer_list<Tensor> inputs, BackwardFn fn);
void record_op(Tensor& output, std::span<const Tensor> inputs, BackwardFn fn);

}  // namespace domprompt
