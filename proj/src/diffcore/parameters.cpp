#include "hypercut/diffcore/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace hypercut::diff {

template <typename T>
BasicParameterSet<T>::BasicParameterSet(const BasicParameterSet& other) {
  *this = other;
}

template <typename T>
BasicParameterSet<T>& BasicParameterSet<T>::operator=(const BasicParameterSet& other) {
  if (this == &other) return *this;
  params_.clear();
  for (const auto& p : other.params_) params_.push_back(std::make_unique<BasicParameter<T>>(*p));
  return *this;
}

template <typename T>
BasicParameter<T>& BasicParameterSet<T>::add(std::string name, Shape shape) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<BasicParameter<T>>();
  p->name = std::move(name);
  p->value = BasicTensor<T>(shape);
  p->grad = BasicTensor<T>(shape);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
BasicParameter<T>* BasicParameterSet<T>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
const BasicParameter<T>* BasicParameterSet<T>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
BasicParameter<T>& BasicParameterSet<T>::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
const BasicParameter<T>& BasicParameterSet<T>::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
std::size_t BasicParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
void BasicParameterSet<T>::zero_grad() {
  for (auto& p : params_) {
    p->grad.resize(p->value.shape());
    p->grad.fill(T(0));
  }
}

template <typename T>
void BasicParameterSet<T>::set_trainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

template <typename T>
void init_glorot_uniform(BasicTensor<T>& t, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;
template void init_glorot_uniform<float>(BasicTensor<float>&, int, int, std::mt19937_64&);
template void init_glorot_uniform<double>(BasicTensor<double>&, int, int, std::mt19937_64&);

}  // namespace hypercut::diff
