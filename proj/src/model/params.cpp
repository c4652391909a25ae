// SPDX-License-Identifier: Apache-2.0
#include "nhp/params.hpp"

#include <cmath>
#include <stdexcept>

namespace nhp {

template <typename T>
Tensor<T>& ParamSet<T>::add(const std::string& name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  names_.push_back(name);
  return map_.emplace(name, Tensor<T>::zeros(std::move(shape), true)).first->second;
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(const std::string& name) const {
  const auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ParamSet<T>::at(const std::string& name) {
  const auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ParamSet<T>::total_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : map_) n += t.size();
  return n;
}

template <typename T>
ParamSet<T> ParamSet<T>::detached() const {
  ParamSet out;
  out.names_ = names_;
  for (const auto& [name, t] : map_) out.map_.emplace(name, t.detach());
  return out;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& [_, t] : map_) t.zero_grad();
}

template <typename T>
template <typename U>
ParamSet<U> ParamSet<T>::cast() const {
  ParamSet<U> out;
  for (const auto& name : names_) {
    const Tensor<T>& src = at(name);
    Tensor<U>& dst = out.add(name, src.shape());
    auto d = dst.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(src.data()[i]);
  }
  return out;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.mutable_data()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
}

template class ParamSet<float>;
template class ParamSet<double>;
template ParamSet<double> ParamSet<float>::cast<double>() const;
template ParamSet<float> ParamSet<double>::cast<float>() const;
template ParamSet<float> ParamSet<float>::cast<float>() const;
template ParamSet<double> ParamSet<double>::cast<double>() const;
template void glorot_fill(Tensor<float>&, std::size_t, std::size_t, std::mt19937_64&);
template void glorot_fill(Tensor<double>&, std::size_t, std::size_t, std::mt19937_64&);

}  // namespace nhp
