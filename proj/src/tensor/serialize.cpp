// SPDX-License-Identifier: Apache-2.0
#include "nhp/serialize.hpp"

#include <array>
#include <bit>
#include <istream>
#include <limits>
#include <ostream>

namespace nhp {

namespace {

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError(std::string("tensor file truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_records(std::ostream& os, const std::vector<TensorRecord>& records) {
  os.write("NHPT", 4);
  put_le<std::uint32_t>(os, kTensorFileVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name too long: " + r.name.substr(0, 32) + "...");
    }
    if (r.precision != 4 && r.precision != 8) throw FormatError("unsupported precision for " + r.name);
    if (numel(r.shape) != r.values.size()) throw FormatError("record size mismatch for " + r.name);
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(r.shape.size()));
    for (auto e : r.shape) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    put_le<std::uint8_t>(os, r.precision);
    for (double v : r.values) {
      if (r.precision == 4) {
        put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  if (!os) throw FormatError("failed to write tensor file");
}

std::vector<TensorRecord> read_records(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "NHPT") {
    throw FormatError("not a tensor file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kTensorFileVersion) {
    throw FormatError("unsupported tensor file version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is, "count");
  std::vector<TensorRecord> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    TensorRecord r;
    const auto len = get_le<std::uint16_t>(is, "name length");
    r.name.resize(len);
    if (!is.read(r.name.data(), len)) throw FormatError("tensor file truncated in name");
    const auto rank = get_le<std::uint8_t>(is, "rank");
    for (std::uint8_t i = 0; i < rank; ++i) r.shape.push_back(get_le<std::uint32_t>(is, "extent"));
    r.precision = get_le<std::uint8_t>(is, "precision");
    if (r.precision != 4 && r.precision != 8) {
      throw FormatError("entry " + r.name + " has unsupported precision " +
                        std::to_string(r.precision));
    }
    const std::size_t n = numel(r.shape);
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (r.precision == 4) {
        r.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(is, "values"));
      } else {
        r.values[i] = std::bit_cast<double>(get_le<std::uint64_t>(is, "values"));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
  TensorRecord r;
  r.name = name;
  r.shape = t.shape();
  r.precision = sizeof(T);
  r.values.assign(t.data().begin(), t.data().end());
  return r;
}

template <typename T>
void assign_record(const TensorRecord& rec, Tensor<T>& t) {
  if (rec.shape != t.shape()) {
    throw FormatError("parameter " + rec.name + " has shape " + shape_str(rec.shape) +
                      ", expected " + shape_str(t.shape()));
  }
  auto dst = t.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
}

template TensorRecord to_record(const std::string&, const Tensor<float>&);
template TensorRecord to_record(const std::string&, const Tensor<double>&);
template void assign_record(const TensorRecord&, Tensor<float>&);
template void assign_record(const TensorRecord&, Tensor<double>&);

}  // namespace nhp
