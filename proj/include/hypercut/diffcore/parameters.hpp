#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "hypercut/diffcore/tensor.hpp"

namespace hypercut::diff {

template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
};

/// Named parameters with stable addresses; graphs hold pointers into the set.
template <typename T>
class BasicParameterSet {
 public:
  BasicParameterSet() = default;
  BasicParameterSet(const BasicParameterSet& other);
  BasicParameterSet& operator=(const BasicParameterSet& other);
  BasicParameterSet(BasicParameterSet&&) noexcept = default;
  BasicParameterSet& operator=(BasicParameterSet&&) noexcept = default;

  BasicParameter<T>& add(std::string name, Shape shape);
  BasicParameter<T>& at(std::string_view name);
  const BasicParameter<T>& at(std::string_view name) const;
  BasicParameter<T>* find(std::string_view name);
  const BasicParameter<T>* find(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  BasicParameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const BasicParameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();
  void set_trainable(bool trainable);

  template <typename U>
  BasicParameterSet<U> cast() const {
    BasicParameterSet<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p->name, p->value.shape());
      q.value = p->value.template cast<U>();
      q.trainable = p->trainable;
    }
    return out;
  }

  friend bool operator==(const BasicParameterSet& a, const BasicParameterSet& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].name != b[i].name || !(a[i].value == b[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<std::unique_ptr<BasicParameter<T>>> params_;
};

using Parameter = BasicParameter<float>;
using ParameterSet = BasicParameterSet<float>;

/// Glorot-uniform fill in +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
void init_glorot_uniform(BasicTensor<T>& t, int fan_in, int fan_out, std::mt19937_64& rng);

/// SplitMix64 step; used to derive independent child seeds from one root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

extern template class BasicParameterSet<float>;
extern template class BasicParameterSet<double>;

}  // namespace hypercut::diff
