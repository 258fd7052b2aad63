#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "moss/error.hpp"

namespace moss::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = next_node_id();

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array that participates in reverse-mode differentiation.
///
/// Copies share storage (handle semantics). Values are treated as immutable once
/// an operation has produced them; only leaves (parameters) are updated in place,
/// and only between tape lifetimes.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values) : s_(std::make_shared<detail::Storage<T>>()) {
    if (numel(shape) != values.size())
      throw InvalidInput("tensor shape " + to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    s_->shape = std::move(shape);
    s_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)));
  }
  static Tensor full(Shape shape, T value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->data.size(); }
  std::uint64_t id() const { return s_->id; }

  std::span<const T> data() const { return s_->data; }
  /// Writable view for leaves; never call on a tensor an active tape depends on.
  std::span<T> mutable_data() { return s_->data; }
  const std::vector<T>& values() const { return s_->data; }
  T operator[](std::size_t i) const { return s_->data[i]; }
  T item() const {
    if (s_->data.size() != 1) throw InvalidInput("item() on tensor with " + std::to_string(size()) + " elements");
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true) {
    s_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return s_->grad.size() == s_->data.size() && !s_->data.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  std::vector<T>& grad_buffer() { return s_->grad_buffer(); }
  void zero_grad() { s_->grad.clear(); }

  /// Copy of the values with no gradient history.
  Tensor detach_copy() const { return Tensor(s_->shape, s_->data); }

  std::shared_ptr<detail::Storage<T>> storage() const { return s_; }

 private:
  std::shared_ptr<detail::Storage<T>> s_;
};

/// Define-by-run record of differentiable operations.
///
/// A tape becomes the recording target while a Tape::Scope for it is alive on
/// the current thread. Operations whose inputs do not require gradients are
/// never recorded, so inference without a scope builds no graph at all.
class Tape {
 public:
  struct Record {
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
    std::function<void()> backward;
    std::function<void()> clear_output_grad;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(current_slot()) { current_slot() = &tape; }
    ~Scope() { current_slot() = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return current_slot(); }

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  template <typename T>
  void push(std::vector<std::uint64_t> inputs, const Tensor<T>& output, std::function<void()> backward) {
    auto storage = output.storage();
    records_.push_back(Record{std::move(inputs), output.id(), std::move(backward),
                              [storage] { storage->grad.clear(); }});
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse order.
  /// Intermediate gradients are reset first, so calling this twice doubles the
  /// leaf gradients instead of compounding intermediate ones.
  template <typename T>
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw InvalidInput("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    for (auto& r : records_) r.clear_output_grad();
    Tensor<T> seeded = loss;
    seeded.grad_buffer()[0] += T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
  }

 private:
  static Tape*& current_slot() {
    thread_local Tape* current = nullptr;
    return current;
  }
  std::vector<Record> records_;
};

namespace detail {

/// Returns the active tape when any of the inputs needs a gradient.
template <typename... Ts>
Tape* recording_tape(const Ts&... inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  const bool any = (inputs.requires_grad() || ...);
  return any ? tape : nullptr;
}

}  // namespace detail

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace moss::ad
