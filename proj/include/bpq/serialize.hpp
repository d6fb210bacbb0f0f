#pragma once

// Little-endian byte buffers and whole-file I/O shared by the vector, codebook
// and index formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <unistd.h>

#include "bpq/common.hpp"

namespace bpq {

template <typename T>
T byteswap_value(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) v = byteswap_value(v);
  return v;
}

template <typename T>
void store_le(std::uint8_t* p, T v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) v = byteswap_value(v);
  std::memcpy(p, &v, sizeof(T));
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const std::size_t at = buf_.size();
    buf_.resize(at + sizeof(T));
    store_le(buf_.data() + at, v);
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    const std::size_t at = buf_.size();
    buf_.resize(at + values.size_bytes());
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
      if (!values.empty()) std::memcpy(buf_.data() + at, values.data(), values.size_bytes());
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) store_le(buf_.data() + at + i * sizeof(T), values[i]);
    }
  }

  void put_magic(const char (&magic)[5]) {
    for (int i = 0; i < 4; ++i) put<std::uint8_t>(static_cast<std::uint8_t>(magic[i]));
  }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    require(sizeof(T));
    T v = load_le<T>(bytes_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }

  template <typename T>
  void get_array(std::span<T> out) {
    require(out.size_bytes());
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
      if (!out.empty()) std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = load_le<T>(bytes_.data() + pos_ + i * sizeof(T));
    }
    pos_ += out.size_bytes();
  }

  template <typename T>
  std::vector<T> get_vector(std::size_t count) {
    std::vector<T> out(count);
    get_array(std::span<T>(out));
    return out;
  }

  void expect_magic(const char (&magic)[5]) {
    require(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0) {
      throw Error(ErrorKind::format, std::string("bad magic, expected ") + magic);
    }
    pos_ += 4;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::format, "truncated input at byte offset " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error(ErrorKind::io, "read failed: " + path.string());
  }
  return bytes;
}

// Writes to a sibling temp file and renames it into place, so a failed write
// never leaves a partial output behind.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorKind::io, "write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::io, "cannot write " + path.string());
  }
}

}  // namespace bpq
