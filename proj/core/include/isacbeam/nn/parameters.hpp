#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "isacbeam/nn/tensor.hpp"

namespace isacbeam::nn {

enum class Init { kGlorotUniform, kZeros, kOnes };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> moment1;  // Adam first moment
  Tensor<T> moment2;  // Adam second moment
  bool trainable = true;
  Init init = Init::kZeros;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
};

// Ordered, name-addressable parameter storage. Layers refer to entries by
// index so a network copies by value without rebinding.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape, Init init, bool trainable = true,
                  std::size_t fan_in = 1, std::size_t fan_out = 1) {
    Parameter<T> p;
    p.name = std::move(name);
    p.value = Tensor<T>(shape);
    if (trainable) {
      p.grad = Tensor<T>(shape);
      p.moment1 = Tensor<T>(shape);
      p.moment2 = Tensor<T>(shape);
    }
    p.trainable = trainable;
    p.init = init;
    p.fan_in = fan_in;
    p.fan_out = fan_out;
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  const Parameter<T>* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  Parameter<T>* find(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::uint64_t adam_steps = 0;

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace isacbeam::nn
