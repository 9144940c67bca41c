// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0

#include "hybridbert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <unordered_set>

#include "hybridbert/errors.hpp"

namespace hybridbert {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'B', 'C', 'K'};

template <typename V>
constexpr ArrayDType dtype_of() {
  if constexpr (std::is_same_v<V, float>) return ArrayDType::f32;
  if constexpr (std::is_same_v<V, double>) return ArrayDType::f64;
  return ArrayDType::i64;
}

template <typename V>
ArrayRecord make_record(std::string name, std::span<const V> values, std::vector<std::uint32_t> dims) {
  ArrayRecord r;
  r.name = std::move(name);
  r.dtype = dtype_of<V>();
  r.dims = std::move(dims);
  if (r.numel() != values.size()) {
    throw CheckpointError("array '" + r.name + "': dims hold " + std::to_string(r.numel()) + " elements, got " +
                          std::to_string(values.size()));
  }
  r.payload.resize(values.size_bytes());
  if (!values.empty()) std::memcpy(r.payload.data(), values.data(), values.size_bytes());
  return r;
}

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what).data(), sizeof(U));
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(ArrayDType dtype) {
  switch (dtype) {
    case ArrayDType::f32: return 4;
    case ArrayDType::f64: return 8;
    case ArrayDType::i64: return 8;
  }
  throw CheckpointError("unknown dtype code " + std::to_string(static_cast<int>(dtype)));
}

const char* dtype_name(ArrayDType dtype) {
  switch (dtype) {
    case ArrayDType::f32: return "f32";
    case ArrayDType::f64: return "f64";
    case ArrayDType::i64: return "i64";
  }
  return "?";
}

std::size_t ArrayRecord::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

ArrayRecord ArrayRecord::from_values(std::string name, std::span<const float> values, std::vector<std::uint32_t> dims) {
  return make_record(std::move(name), values, std::move(dims));
}
ArrayRecord ArrayRecord::from_values(std::string name, std::span<const double> values, std::vector<std::uint32_t> dims) {
  return make_record(std::move(name), values, std::move(dims));
}
ArrayRecord ArrayRecord::from_values(std::string name, std::span<const std::int64_t> values,
                                     std::vector<std::uint32_t> dims) {
  return make_record(std::move(name), values, std::move(dims));
}

template <typename V>
void ArrayRecord::copy_to(std::span<V> out) const {
  if (dtype != dtype_of<V>()) {
    throw CheckpointError("array '" + name + "' has dtype " + dtype_name(dtype) + ", expected " + dtype_name(dtype_of<V>()));
  }
  if (out.size_bytes() != payload.size()) {
    throw CheckpointError("array '" + name + "' holds " + std::to_string(numel()) + " elements, expected " +
                          std::to_string(out.size()));
  }
  if (!out.empty()) std::memcpy(out.data(), payload.data(), payload.size());
}

template void ArrayRecord::copy_to(std::span<float>) const;
template void ArrayRecord::copy_to(std::span<double>) const;
template void ArrayRecord::copy_to(std::span<std::int64_t>) const;

std::vector<std::uint8_t> encode_checkpoint(const std::vector<ArrayRecord>& arrays) {
  if (arrays.size() > std::numeric_limits<std::uint32_t>::max()) throw CheckpointError("too many arrays");
  std::unordered_set<std::string> seen;
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.name.empty() || a.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw CheckpointError("array name must hold 1..65535 bytes");
    }
    if (!seen.insert(a.name).second) throw CheckpointError("duplicate array name '" + a.name + "'");
    if (a.dims.size() > std::numeric_limits<std::uint8_t>::max()) throw CheckpointError("array '" + a.name + "': rank too large");
    if (a.payload.size() != a.numel() * dtype_size(a.dtype)) {
      throw CheckpointError("array '" + a.name + "': payload size does not match dims");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) put<std::uint32_t>(out, d);
    out.insert(out.end(), a.payload.begin(), a.payload.end());
  }
  return out;
}

std::vector<ArrayRecord> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>("array count");
  std::vector<ArrayRecord> arrays;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    ArrayRecord a;
    const auto name_len = in.get<std::uint16_t>("name length");
    if (name_len == 0) throw CheckpointError("empty array name at byte " + std::to_string(in.position()));
    auto name = in.take(name_len, "name");
    a.name.assign(name.begin(), name.end());
    if (!seen.insert(a.name).second) throw CheckpointError("duplicate array name '" + a.name + "'");
    const auto code = in.get<std::uint8_t>("dtype");
    if (code > static_cast<std::uint8_t>(ArrayDType::i64)) {
      throw CheckpointError("array '" + a.name + "': unknown dtype code " + std::to_string(code));
    }
    a.dtype = static_cast<ArrayDType>(code);
    const auto rank = in.get<std::uint8_t>("rank");
    std::uint64_t numel = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      a.dims.push_back(in.get<std::uint32_t>("dims"));
      numel *= a.dims.back();
      if (numel > bytes.size()) throw CheckpointError("array '" + a.name + "': dims exceed file size");
    }
    auto payload = in.take(numel * dtype_size(a.dtype), "payload");
    a.payload.assign(payload.begin(), payload.end());
    arrays.push_back(std::move(a));
  }
  if (!in.done()) {
    throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - in.position()) + " trailing bytes");
  }
  return arrays;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<ArrayRecord>& arrays) {
  const auto bytes = encode_checkpoint(arrays);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::vector<ArrayRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hybridbert
