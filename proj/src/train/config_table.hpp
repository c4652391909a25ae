// SPDX-License-Identifier: Apache-2.0
//
// Scalar configuration keys shared by the INI reader and checkpoints.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nhp/trainer.hpp"

namespace nhp::detail {

enum class KeyKind { kInt, kReal, kBool };

struct ConfigKey {
  std::string section, name;
  KeyKind kind;
  std::function<double(const TrainConfig&)> get;
  std::function<void(TrainConfig&, double)> set;
};

const std::vector<ConfigKey>& config_keys();

}  // namespace nhp::detail
