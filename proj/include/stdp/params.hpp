// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stdp/autodiff.hpp"
#include "stdp/tensor.hpp"

namespace stdp {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named trainable arrays in a fixed registration order.
template <class T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Shape shape) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter '" + name + "'");
    params_.push_back({std::move(name), Tensor<T>(shape), Tensor<T>(shape)});
    return params_.size() - 1;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw std::out_of_range("no parameter named '" + name + "'");
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) {
      const auto i = out.add(p.name, p.value.shape());
      out[i].value = p.value.template cast<U>();
    }
    return out;
  }

  bool same_values(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (params_[i].name != other[i].name || !(params_[i].value == other[i].value)) return false;
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace stdp
