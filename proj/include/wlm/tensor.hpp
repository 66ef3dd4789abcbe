#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wlm/error.hpp"

namespace wlm {

using Shape = std::vector<std::size_t>;
using TokenId = std::uint32_t;

// Additive attention-mask value for blocked positions. Finite so that 32-bit
// exponentials never see inf - inf; exp(-1e9 - max) underflows to exactly 0.
inline constexpr double kMaskSentinel = -1e9;
inline constexpr double kMaskedThreshold = -5e8;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "×" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array with an optional gradient buffer. An empty grad
// vector means "no gradient yet".
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) { check_shape(); }
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
      fail(ErrorKind::dimension, "data length " + std::to_string(data.size()) + " does not match shape " +
                                     shape_str(shape));
    check_shape();
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }

  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool has_grad() const noexcept { return !grad.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }

 private:
  void check_shape() const {
    for (auto d : shape)
      if (d == 0) fail(ErrorKind::dimension, "shape " + shape_str(shape) + " has a zero extent");
  }
};

template <class T>
using Var = std::shared_ptr<Tensor<T>>;

template <class T>
Var<T> make_var(Shape shape, std::vector<T> values, bool requires_grad = false) {
  auto v = std::make_shared<Tensor<T>>(std::move(shape), std::move(values));
  v->requires_grad = requires_grad;
  return v;
}

template <class T>
Var<T> make_var(Shape shape, T fill = T(0), bool requires_grad = false) {
  auto v = std::make_shared<Tensor<T>>(std::move(shape), fill);
  v->requires_grad = requires_grad;
  return v;
}

// Tape of adjoint closures. Operations append in forward order; backward()
// replays them in exact reverse order. A non-recording graph is used for
// inference and never stores closures.
template <class T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return tape_.size(); }

  template <class... Inputs>
  bool needs_grad(const Inputs&... inputs) const {
    return recording_ && (... || inputs->requires_grad);
  }

  void record(std::function<void()> adjoint) {
    if (recording_) tape_.push_back(std::move(adjoint));
  }

  void backward(const Var<T>& loss) {
    if (!loss || loss->size() != 1)
      fail(ErrorKind::contract, "backward requires a scalar loss, got shape " +
                                    (loss ? shape_str(loss->shape) : std::string("<null>")));
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    tape_.clear();
  }

  // Visit order hook for tests of the replay contract.
  void backward_with_trace(const Var<T>& loss, std::vector<std::size_t>& order) {
    if (!loss || loss->size() != 1) fail(ErrorKind::contract, "backward requires a scalar loss");
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (std::size_t i = tape_.size(); i-- > 0;) {
      order.push_back(i);
      tape_[i]();
    }
    tape_.clear();
  }

 private:
  bool recording_;
  std::vector<std::function<void()>> tape_;
};

// A trainable tensor plus its Adam moments.
template <class T>
struct Parameter {
  std::string name;
  Var<T> value;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Shape shape, std::vector<T> init)
      : name(std::move(n)),
        value(make_var<T>(shape, std::move(init), true)),
        adam_m(shape),
        adam_v(shape) {}

  std::size_t size() const { return value->size(); }
  const Shape& shape() const { return value->shape; }
};

}  // namespace wlm
