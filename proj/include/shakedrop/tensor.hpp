#ifndef SHAKEDROP_TENSOR_HPP_
#define SHAKEDROP_TENSOR_HPP_

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace shakedrop {

using Real = double;
using Shape = std::vector<int>;

inline int shape_numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor of doubles. Image tensors follow the NCHW layout.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (static_cast<std::size_t>(shape_numel(shape_)) != data_.size())
      throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
  static Tensor full_like(const Tensor& t, Real v) { return Tensor(t.shape_, v); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int numel() const { return static_cast<int>(data_.size()); }
  bool is_scalar() const { return data_.size() == 1; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }

  Real& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  const Real& operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW element access.
  Real& at(int n, int c, int h, int w) {
    assert(ndim() == 4);
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const Real& at(int n, int c, int h, int w) const {
    return const_cast<Tensor*>(this)->at(n, c, h, w);
  }

  void fill(Real v) { data_.assign(data_.size(), v); }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void check_shape() const {
    if (shape_.empty()) throw std::invalid_argument("tensor: empty shape");
    for (int d : shape_)
      if (d < 1) throw std::invalid_argument("tensor: dimension sizes must be >= 1, got " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<Real> data_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

namespace detail {

// Row-major strides with stride 0 for broadcast (size-1) dimensions.
inline void broadcast_strides(const Shape& from, const Shape& to, int* strides) {
  if (from.size() != to.size())
    throw std::invalid_argument("broadcast: rank mismatch " + shape_str(from) + " vs " + shape_str(to));
  int s = 1;
  for (int i = static_cast<int>(from.size()) - 1; i >= 0; --i) {
    if (from[static_cast<std::size_t>(i)] != to[static_cast<std::size_t>(i)] &&
        from[static_cast<std::size_t>(i)] != 1)
      throw std::invalid_argument("broadcast: shape " + shape_str(from) + " not broadcastable to " +
                                  shape_str(to));
    strides[i] = from[static_cast<std::size_t>(i)] == 1 ? 0 : s;
    s *= from[static_cast<std::size_t>(i)];
  }
}

template <typename F>
inline void for_each_broadcast(const Tensor& coeff, const Tensor& x, F&& f) {
  if (coeff.is_scalar()) {
    const Real c = coeff[0];
    for (int i = 0; i < x.numel(); ++i) f(i, c);
    return;
  }
  constexpr int kMaxRank = 8;
  if (x.ndim() > kMaxRank) throw std::invalid_argument("broadcast: rank too large");
  int strides[kMaxRank] = {0};
  broadcast_strides(coeff.shape(), x.shape(), strides);
  const int rank = x.ndim();
  std::vector<int> idx(static_cast<std::size_t>(rank), 0);
  int coeff_off = 0;
  for (int i = 0; i < x.numel(); ++i) {
    f(i, coeff[coeff_off]);
    for (int d = rank - 1; d >= 0; --d) {
      coeff_off += strides[d];
      if (++idx[static_cast<std::size_t>(d)] < x.dim(d)) break;
      coeff_off -= strides[d] * x.dim(d);
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

// y = coeff (*) x, where coeff is a scalar or has size-1 broadcast dims.
inline Tensor broadcast_mul(const Tensor& coeff, const Tensor& x) {
  Tensor y = Tensor::zeros_like(x);
  detail::for_each_broadcast(coeff, x, [&](int i, Real c) { y[i] = c * x[i]; });
  return y;
}

// acc += coeff (*) x (backward accumulation helper).
inline void add_broadcast_mul(Tensor& acc, const Tensor& coeff, const Tensor& x) {
  if (!acc.same_shape(x)) throw std::invalid_argument("add_broadcast_mul: accumulator shape mismatch");
  detail::for_each_broadcast(coeff, x, [&](int i, Real c) { acc[i] += c * x[i]; });
}

inline Tensor broadcast_to(const Tensor& coeff, const Shape& shape) {
  Tensor ones(shape, 1.0);
  return broadcast_mul(coeff, ones);
}

}  // namespace shakedrop

#endif  // SHAKEDROP_TENSOR_HPP_
