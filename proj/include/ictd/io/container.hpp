#pragma once

// Binary tensor container shared by checkpoints, datasets and fitted
// classifiers:
//   "ICTD" | u32 version=1 | u32 len + fingerprint bytes | u32 count |
//   count x ( u16 len + name | u8 rank | rank x u32 dim | float32 LE data )

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ictd/tensor.hpp"

namespace ictd::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'I', 'C', 'T', 'D'};
inline constexpr std::uint32_t kFormatVersion = 1;

class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Container {
  std::string fingerprint;
  std::vector<NamedTensor> tensors;

  void add(std::string name, Shape shape, std::vector<float> data) {
    if (shape_numel(shape) != data.size())
      throw dimension_error("container: tensor '" + name + "' data does not match its shape");
    tensors.push_back({std::move(name), std::move(shape), std::move(data)});
  }
  void add(std::string name, const Tensor& t) {
    add(std::move(name), t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
  }

  bool contains(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }

  const NamedTensor& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw format_error("container: missing tensor '" + name + "'");
  }

  Tensor tensor(const std::string& name) const {
    const auto& t = get(name);
    return Tensor(t.shape, t.data);
  }
};

namespace detail {

template <class U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U take(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw format_error("container: unexpected end of data");
  return v;
}

}  // namespace detail

inline void write_container(std::ostream& os, const Container& c) {
  os.write(kMagic, 4);
  detail::put<std::uint32_t>(os, kFormatVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.fingerprint.size()));
  os.write(c.fingerprint.data(), static_cast<std::streamsize>(c.fingerprint.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.name.size() > 0xFFFF) throw format_error("container: tensor name too long");
    if (t.shape.size() > 0xFF) throw format_error("container: tensor rank too large");
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
}

inline Container read_container(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw format_error("container: bad magic bytes");
  const auto version = detail::take<std::uint32_t>(is);
  if (version != kFormatVersion)
    throw format_error("container: unsupported format version " + std::to_string(version));
  Container c;
  const auto flen = detail::take<std::uint32_t>(is);
  c.fingerprint.resize(flen);
  is.read(c.fingerprint.data(), flen);
  if (!is) throw format_error("container: truncated fingerprint");
  const auto count = detail::take<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto nlen = detail::take<std::uint16_t>(is);
    t.name.resize(nlen);
    is.read(t.name.data(), nlen);
    const auto rank = detail::take<std::uint8_t>(is);
    for (std::uint8_t r = 0; r < rank; ++r) t.shape.push_back(detail::take<std::uint32_t>(is));
    t.data.resize(shape_numel(t.shape));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!is) throw format_error("container: truncated tensor '" + t.name + "'");
    c.tensors.push_back(std::move(t));
  }
  return c;
}

inline std::string to_bytes(const Container& c) {
  std::ostringstream os(std::ios::binary);
  write_container(os, c);
  return os.str();
}

inline Container from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_container(is);
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  write_container(os, c);
  if (!os) throw io_error("write failed: " + path.string());
}

/// Loads a container; when expected_fingerprint is non-empty it must match.
inline Container load_container(const std::filesystem::path& path,
                                const std::string& expected_fingerprint = "") {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  Container c;
  try {
    c = read_container(is);
  } catch (const format_error& e) {
    throw format_error(path.string() + ": " + e.what());
  }
  if (!expected_fingerprint.empty() && c.fingerprint != expected_fingerprint)
    throw format_error(path.string() + ": configuration fingerprint does not match");
  return c;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw io_error("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace ictd::io
