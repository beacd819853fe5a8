#include "domprompt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace domprompt {
namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{0};

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_tensor(Shape shape, Precision precision) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->precision = precision;
  if (precision == Precision::f32) {
    impl->data.f32.assign(n, 0.0f);
  } else {
    impl->data.f64.assign(n, 0.0);
  }
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, Precision precision) {
  return make_tensor(std::move(shape), precision);
}

Tensor Tensor::full(Shape shape, double value, Precision precision) {
  Tensor t = make_tensor(std::move(shape), precision);
  visit_precision(precision, [&]<class T>() {
    auto& v = t.impl_->data.get<T>();
    std::fill(v.begin(), v.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, Precision precision) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("from_values: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(values.size()));
  }
  Tensor t = make_tensor(std::move(shape), precision);
  visit_precision(precision, [&]<class T>() {
    auto& v = t.impl_->data.get<T>();
    std::transform(values.begin(), values.end(), v.begin(),
                   [](double x) { return static_cast<T>(x); });
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values,
                           Precision precision) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     precision);
}

Tensor Tensor::from_buffer(Shape shape, std::vector<float> values) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) throw DimensionError("from_buffer: size mismatch");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->precision = Precision::f32;
  impl->data.f32 = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_buffer(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) throw DimensionError("from_buffer: size mismatch");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->precision = Precision::f64;
  impl->data.f64 = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, Precision precision) { return full({}, value, precision); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(impl_->shape); }

std::vector<double> Tensor::values() const {
  return visit_precision(precision(), [&]<class T>() {
    const auto& v = impl_->data.get<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::size_t i) const {
  return visit_precision(precision(),
                         [&]<class T>() { return static_cast<double>(impl_->data.get<T>().at(i)); });
}

Tensor Tensor::cast(Precision target) const {
  Tensor out = make_tensor(shape(), target);
  visit_precision(precision(), [&]<class S>() {
    const auto& src = impl_->data.get<S>();
    visit_precision(target, [&]<class D>() {
      auto& dst = out.impl_->data.get<D>();
      std::transform(src.begin(), src.end(), dst.begin(), [](S x) { return static_cast<D>(x); });
    });
  });
  return out;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->precision = impl_->precision;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (impl_->node != static_cast<std::size_t>(-1)) {
    throw TapeError("requires_grad can only be set on leaf tensors");
  }
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::on_tape() const {
  const Tape* tape = active_tape();
  return impl_ && tape != nullptr && impl_->tape_serial == tape->serial();
}

void Tensor::check_precision(Precision p) const {
  if (!impl_) throw std::logic_error("access to undefined tensor");
  if (impl_->precision != p) {
    throw DimensionError(std::string("precision mismatch: tensor is ") +
                         (impl_->precision == Precision::f32 ? "f32" : "f64"));
  }
}

void Tensor::check_writable() const {
  if (impl_->node != static_cast<std::size_t>(-1)) {
    throw TapeError("cannot write to a tensor produced by a recorded operation");
  }
}

// ---------------------------------------------------------------------------

Tape::Tape() : serial_(++g_tape_counter) {}

Tape::~Tape() = default;

bool Tape::tracks(const Tensor& t) const {
  return t.defined() && (t.impl_->requires_grad || t.impl_->tape_serial == serial_);
}

void Tape::record(Tensor& output, std::span<const Tensor> inputs, BackwardFn fn) {
  if (consumed_) throw TapeError("cannot record on a tape whose backward pass already ran");
  Node node;
  bool any = false;
  node.inputs.reserve(inputs.size());
  node.tracked.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    const bool tracked = tracks(in);
    any = any || tracked;
    node.inputs.push_back(in.impl_);
    node.tracked.push_back(tracked);
  }
  if (!any) return;
  node.output = output.impl_;
  node.backward = std::move(fn);
  output.impl_->tape_serial = serial_;
  output.impl_->node = nodes_.size();
  nodes_.push_back(std::move(node));
  node_grads_.emplace_back();
}

Buffer* Tape::grad_slot(const std::shared_ptr<TensorImpl>& t, bool create) {
  Buffer* slot = nullptr;
  if (t->tape_serial == serial_ && t->node < nodes_.size()) {
    slot = &node_grads_[t->node];
  } else if (t->requires_grad) {
    auto it = leaf_grads_.find(t.get());
    if (it == leaf_grads_.end()) {
      if (!create) return nullptr;
      it = leaf_grads_.emplace(t.get(), LeafGrad{t, {}}).first;
    }
    slot = &it->second.grad;
  } else {
    return nullptr;
  }
  if (create && slot->empty()) {
    const std::size_t n = shape_numel(t->shape);
    if (t->precision == Precision::f32) {
      slot->f32.assign(n, 0.0f);
    } else {
      slot->f64.assign(n, 0.0);
    }
  }
  return slot;
}

const Buffer* Tape::find_grad(const TensorImpl* t) const {
  if (t->tape_serial == serial_ && t->node < nodes_.size()) {
    const Buffer& b = node_grads_[t->node];
    return b.empty() ? nullptr : &b;
  }
  auto it = leaf_grads_.find(t);
  return it == leaf_grads_.end() ? nullptr : &it->second.grad;
}

Buffer* GradContext::input_grad(std::size_t i) {
  if (!node_->tracked[i]) return nullptr;
  return tape_.grad_slot(node_->inputs[i], true);
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward already ran on this tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw TapeError("backward requires a one-element loss, got " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (loss.impl_->tape_serial != serial_) throw TapeError("loss was not recorded on this tape");
  consumed_ = true;
  const std::size_t root = loss.impl_->node;
  Buffer* seed = grad_slot(loss.impl_, true);
  visit_precision(loss.precision(), [&]<class T>() { seed->get<T>()[0] = T(1); });
  for (std::size_t i = root + 1; i-- > 0;) {
    if (node_grads_[i].empty()) continue;
    GradContext ctx(*this, &nodes_[i], &node_grads_[i]);
    nodes_[i].backward(ctx);
  }
}

bool Tape::has_grad(const Tensor& t) const { return t.defined() && find_grad(t.id()) != nullptr; }

Tensor Tape::grad(const Tensor& t) const {
  const Buffer* b = t.defined() ? find_grad(t.id()) : nullptr;
  if (b == nullptr) throw TapeError("no gradient recorded for tensor " + shape_str(t.shape()));
  if (t.precision() == Precision::f32) return Tensor::from_buffer(t.shape(), b->f32);
  return Tensor::from_buffer(t.shape(), b->f64);
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void record_op(Tensor& output, std::span<const Tensor> inputs, BackwardFn fn) {
  Tape* tape = active_tape();
  if (tape == nullptr) return;
  tape->record(output, inputs, std::move(fn));
}

void record_op(Tensor& output, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  record_op(output, std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(fn));
}

}  // namespace domprompt
