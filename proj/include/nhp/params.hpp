// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "nhp/tensor.hpp"

namespace nhp {

// Named learnable tensors in insertion order. Modules look their weights up
// by name at forward time, so a detached copy drives inference with the
// same code path.
template <typename T>
class ParamSet {
 public:
  Tensor<T>& add(const std::string& name, Shape shape);
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t total_values() const;

  ParamSet detached() const;
  void zero_grad();

  template <typename U>
  ParamSet<U> cast() const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor<T>> map_;
};

// Portable uniform [0, 1) from a 64-bit engine (std distributions differ
// across standard libraries).
double uniform01(std::mt19937_64& rng);

// Glorot-uniform fill for a [fan_in, fan_out] weight.
template <typename T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace nhp
