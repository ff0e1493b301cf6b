#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clfd/error.hpp"
#include "clfd/tensor.hpp"

namespace clfd {

template <class S>
struct NamedTensor {
  std::string name;
  Tensor<S> value;
};

// Ordered, uniquely named collection of trainable tensors. Order is the
// contract between optimizers, gradients, and checkpoints.
template <class S>
class ParameterSet {
 public:
  Tensor<S>& add(std::string name, Tensor<S> value) {
    check(find(name) == nullptr, ErrorCategory::internal,
          "parameter set: duplicate name '", name, "'");
    items_.push_back(NamedTensor<S>{std::move(name), std::move(value)});
    return items_.back().value;
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  NamedTensor<S>& operator[](std::size_t i) { return items_.at(i); }
  const NamedTensor<S>& operator[](std::size_t i) const { return items_.at(i); }

  Tensor<S>* find(const std::string& name) {
    for (auto& it : items_)
      if (it.name == name) return &it.value;
    return nullptr;
  }
  const Tensor<S>* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }

  Tensor<S>& at(const std::string& name) {
    Tensor<S>* p = find(name);
    check(p != nullptr, ErrorCategory::internal,
          "parameter set: no parameter named '", name, "'");
    return *p;
  }
  const Tensor<S>& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }

  std::size_t total_numel() const {
    std::size_t n = 0;
    for (const auto& it : items_) n += it.value.numel();
    return n;
  }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& it : items_) out.add(it.name, it.value.template cast<T>());
    return out;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<NamedTensor<S>> items_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction (Kingma & Ba). Validates gradient alignment and
// finiteness before touching any parameter, so a failed step is a no-op.
template <class S>
class Adam {
 public:
  explicit Adam(const ParameterSet<S>& params, AdamConfig cfg = {})
      : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& it : params) {
      m_.push_back(Tensor<S>::zeros(it.value.shape));
      v_.push_back(Tensor<S>::zeros(it.value.shape));
    }
  }

  void step(ParameterSet<S>& params, const std::vector<Tensor<S>>& grads) {
    check(params.size() == m_.size(), ErrorCategory::internal,
          "adam: parameter count ", params.size(),
          " does not match optimizer state ", m_.size());
    check(grads.size() == params.size(), ErrorCategory::internal,
          "adam: got ", grads.size(), " gradients for ", params.size(),
          " parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
      check(grads[i].shape == params[i].value.shape, ErrorCategory::internal,
            "adam: gradient shape ", shape_str(grads[i].shape),
            " does not match parameter '", params[i].name, "' shape ",
            shape_str(params[i].value.shape));
      check(grads[i].all_finite(), ErrorCategory::numeric,
            "adam: non-finite gradient for parameter '", params[i].name, "'");
    }
    ++t_;
    const S bc1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, double(t_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, double(t_)));
    const S lr = static_cast<S>(cfg_.lr);
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S eps = static_cast<S>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      S* p = params[i].value.data.data();
      S* m = m_[i].data.data();
      S* v = v_[i].data.data();
      const S* g = grads[i].data.data();
      const std::size_t n = params[i].value.numel();
      for (std::size_t j = 0; j < n; ++j) {
        m[j] = b1 * m[j] + (S(1) - b1) * g[j];
        v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
        const S mhat = m[j] / bc1;
        const S vhat = v[j] / bc2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return t_; }
  const std::vector<Tensor<S>>& first_moments() const { return m_; }
  const std::vector<Tensor<S>>& second_moments() const { return v_; }

  // Checkpoint restore. Shapes must match the parameter set this optimizer
  // was constructed for.
  void set_state(std::vector<Tensor<S>> m, std::vector<Tensor<S>> v,
                 std::uint64_t t) {
    check(m.size() == m_.size() && v.size() == v_.size(),
          ErrorCategory::data, "adam: restore state count mismatch");
    for (std::size_t i = 0; i < m.size(); ++i)
      check(m[i].shape == m_[i].shape && v[i].shape == v_[i].shape,
            ErrorCategory::data, "adam: restore state shape mismatch at index ",
            i);
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<S>> m_;
  std::vector<Tensor<S>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace clfd
