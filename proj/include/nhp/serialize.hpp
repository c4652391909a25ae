// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor container ("NHPT"), little-endian:
//   magic "NHPT" | version u32 | count u32 |
//   per entry: name_len u16, UTF-8 name, rank u8, extents u32 x rank,
//              precision u8 (4 or 8), raw values.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "nhp/tensor.hpp"

namespace nhp {

inline constexpr std::uint32_t kTensorFileVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::string name;
  Shape shape;
  std::uint8_t precision = 4;  // bytes per value
  std::vector<double> values;  // widened; float round-trips exactly
};

void write_records(std::ostream& os, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_records(std::istream& is);

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t);

// Copies a record into an existing tensor of identical shape.
template <typename T>
void assign_record(const TensorRecord& rec, Tensor<T>& t);

}  // namespace nhp
