#pragma once

// Dense NCHW tensor with an optional gradient buffer, plus the recording tape
// used for reverse-mode differentiation.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dmnet {

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  [[nodiscard]] constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  [[nodiscard]] constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
    return os.str();
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <class T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : s_(std::make_shared<detail::Storage<T>>()) {}

  explicit BasicTensor(Shape shape, T fill = T(0)) : s_(std::make_shared<detail::Storage<T>>()) {
    s_->shape = shape;
    s_->data.assign(shape.numel(), fill);
  }

  BasicTensor(Shape shape, std::vector<T> values) : s_(std::make_shared<detail::Storage<T>>()) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    s_->shape = shape;
    s_->data = std::move(values);
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1, 1, 1, 1}, v); }

  [[nodiscard]] const Shape& shape() const noexcept { return s_->shape; }
  [[nodiscard]] std::size_t numel() const noexcept { return s_->data.size(); }
  [[nodiscard]] bool empty() const noexcept { return s_->data.empty(); }

  [[nodiscard]] std::span<T> data() noexcept { return s_->data; }
  [[nodiscard]] std::span<const T> data() const noexcept { return s_->data; }
  [[nodiscard]] T* ptr() noexcept { return s_->data.data(); }
  [[nodiscard]] const T* ptr() const noexcept { return s_->data.data(); }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return s_->data[0];
  }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const Shape& s = s_->shape;
    return s_->data[((n * s.c + c) * s.h + h) * s.w + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = s_->shape;
    return s_->data[((n * s.c + c) * s.h + h) * s.w + w];
  }

  [[nodiscard]] bool requires_grad() const noexcept { return s_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    s_->requires_grad = on;
    return *this;
  }

  [[nodiscard]] bool has_grad() const noexcept { return !s_->grad.empty(); }
  [[nodiscard]] std::span<T> grad() noexcept { return s_->grad; }
  [[nodiscard]] std::span<const T> grad() const noexcept { return s_->grad; }

  /// Gradient buffer, allocated zero-filled on first use.
  std::span<T> grad_buffer() const {
    if (s_->grad.empty()) s_->grad.assign(numel(), T(0));
    return s_->grad;
  }

  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void drop_grad() { s_->grad.clear(); s_->grad.shrink_to_fit(); }

  /// Deep copy of values; the copy is a fresh leaf.
  [[nodiscard]] BasicTensor clone() const {
    BasicTensor out(shape(), s_->data);
    return out;
  }

  [[nodiscard]] const void* id() const noexcept { return s_.get(); }
  [[nodiscard]] bool same(const BasicTensor& o) const noexcept { return s_ == o.s_; }

 private:
  std::shared_ptr<detail::Storage<T>> s_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <class To, class From>
BasicTensor<To> cast(const BasicTensor<From>& x) {
  BasicTensor<To> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
class BasicTape {
 public:
  struct Node {
    const char* op;
    std::vector<BasicTensor<T>> inputs;
    BasicTensor<T> output;
    std::function<void()> backward;
  };

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  void record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
              std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
  }

  [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return nodes_; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  [[nodiscard]] static BasicTape*& active() noexcept {
    thread_local BasicTape* current = nullptr;
    return current;
  }

 private:
  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

/// Makes `tape` the recording target for the current thread while alive.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<T>& tape) : prev_(BasicTape<T>::active()) {
    BasicTape<T>::active() = &tape;
  }
  ~TapeScope() { BasicTape<T>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<T>* prev_;
};

template <class T>
TapeScope(BasicTape<T>&) -> TapeScope<T>;

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> xs) {
  for (const auto* x : xs)
    if (x && x->requires_grad()) return true;
  return false;
}

/// Registers `out` as produced by `op` when a tape is recording and some input
/// needs a gradient. `bw` receives nothing; it captures what it needs.
template <class T, class Backward>
void record(const char* op, std::vector<BasicTensor<T>> inputs, BasicTensor<T>& out,
            Backward&& bw) {
  BasicTape<T>* tape = BasicTape<T>::active();
  if (tape == nullptr) return;
  bool needed = false;
  for (const auto& x : inputs) needed = needed || x.requires_grad();
  if (!needed) return;
  out.set_requires_grad(true);
  tape->record(op, std::move(inputs), out, std::function<void()>(std::forward<Backward>(bw)));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

struct BackwardReport {
  bool attached = false;        // loss was produced on the tape (or is itself a leaf)
  std::size_t nodes_replayed = 0;
};

/// Replays the tape in reverse, accumulating d(loss)/d(x) into every tensor
/// that requires a gradient. A loss that was never recorded yields
/// `attached == false` and leaves all gradients untouched.
template <class T>
[[nodiscard]] BackwardReport backward(BasicTape<T>& tape, BasicTensor<T> loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  BackwardReport report;
  const auto& nodes = tape.nodes();
  auto it = std::find_if(nodes.rbegin(), nodes.rend(),
                         [&](const auto& nd) { return nd.output.same(loss); });
  if (it == nodes.rend()) {
    if (loss.requires_grad()) {
      loss.grad_buffer()[0] += T(1);
      report.attached = true;
    }
    return report;
  }
  report.attached = true;
  loss.grad_buffer()[0] += T(1);
  for (; it != nodes.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // does not reach the loss
    it->backward();
    ++report.nodes_replayed;
  }
  return report;
}

}  // namespace dmnet
