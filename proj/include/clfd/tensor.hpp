#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "clfd/error.hpp"
#include "clfd/rng.hpp"

namespace clfd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense n-dimensional array, row-major. Scalar is float for training and
// double for verification paths.
template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}
  Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
    check(data.size() == shape_numel(shape), ErrorCategory::data,
          "tensor: data length ", data.size(), " does not match shape ", shape_str(shape));
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }

  static Tensor full(Shape sh, S value) {
    Tensor t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  static Tensor scalar(S value) { return Tensor(Shape{}, {value}); }

  static Tensor vector(std::initializer_list<S> values) {
    std::vector<S> v(values);
    Shape sh{v.size()};
    return Tensor(std::move(sh), std::move(v));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return data.size() == 1 && shape.empty(); }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a64(shape.data(), shape.size() * sizeof(std::size_t));
    return fnv1a64(data.data(), data.size() * sizeof(S), h);
  }
};

template <class S>
Tensor<S> random_uniform(Shape sh, S lo, S hi, Rng& rng) {
  Tensor<S> t(std::move(sh));
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <class S>
Tensor<S> random_normal(Shape sh, S mean, S stddev, Rng& rng) {
  Tensor<S> t(std::move(sh));
  for (auto& v : t.data) v = static_cast<S>(mean + stddev * rng.normal());
  return t;
}

}  // namespace clfd
