#pragma once

// Binary containers.
//
// TensorFile (all integers little-endian):
//   0      4 bytes  magic "LTEN"
//   4      u16      version (1)
//   6      u8       dtype: 1 = f32, 2 = f64
//   7      u8       rank
//   8      u64[rank] dims
//   ...    payload, product(dims) values, row-major, IEEE-754 little-endian
//
// Bundle (named tensors, used for mask sets, results and checkpoints):
//   0      4 bytes  magic "LBDL"
//   4      u16      version (1)
//   6      u16      reserved, 0
//   8      u32      record count
//   then per record: u32 name length, name bytes, one TensorFile record

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lois/tensor.hpp"

namespace lois {

/// Malformed binary or text input; `offset` is the byte (or line) position.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset(offset) {}
  std::size_t offset;
};

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

inline constexpr std::uint16_t kFormatVersion = 1;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes, std::size_t base = 0) : bytes_(bytes), base_(base) {}

  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return base_ + pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw ParseError("unexpected end of data (need " + std::to_string(n) + " more bytes)", offset());
  }

 private:
  std::string_view bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Appends one TensorFile record to `out`.
inline void encode_tensor(std::string& out, const Tensor<double>& t, DType dtype = DType::F64) {
  out.append("LTEN");
  detail::put_le(out, kFormatVersion, 2);
  detail::put_le(out, static_cast<std::uint8_t>(dtype), 1);
  if (t.rank() > 255) throw ShapeError("tensor rank exceeds 255");
  detail::put_le(out, t.rank(), 1);
  for (auto d : t.dims()) detail::put_le(out, d, 8);
  for (double v : t.values()) {
    if (dtype == DType::F32)
      detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    else
      detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  }
}

inline std::string encode_tensor(const Tensor<double>& t, DType dtype = DType::F64) {
  std::string out;
  encode_tensor(out, t, dtype);
  return out;
}

inline Tensor<double> decode_tensor(detail::ByteReader& in) {
  const std::size_t start = in.offset();
  if (in.take(4) != "LTEN") throw ParseError("bad tensor magic", start);
  const auto version_at = in.offset();
  const auto version = in.le(2);
  if (version != kFormatVersion)
    throw ParseError("unsupported tensor version " + std::to_string(version), version_at);
  const auto dtype_at = in.offset();
  const auto dtype = in.le(1);
  if (dtype != 1 && dtype != 2) throw ParseError("unknown dtype tag " + std::to_string(dtype), dtype_at);
  const auto rank = in.le(1);
  std::vector<std::size_t> dims(rank);
  std::size_t count = 1;
  for (auto& d : dims) {
    const auto at = in.offset();
    d = static_cast<std::size_t>(in.le(8));
    if (d != 0 && count > (std::size_t{1} << 40) / d) throw ParseError("tensor dims overflow", at);
    count *= d;
  }
  const std::size_t width = dtype == 1 ? 4 : 8;
  in.need(count * width);
  std::vector<double> data(count);
  for (auto& v : data) {
    if (width == 4)
      v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(in.le(4))));
    else
      v = std::bit_cast<double>(in.le(8));
  }
  return Tensor<double>(std::move(dims), std::move(data));
}

inline Tensor<double> decode_tensor(std::string_view bytes) {
  detail::ByteReader in(bytes);
  auto t = decode_tensor(in);
  if (!in.done()) throw ParseError("trailing bytes after tensor payload", in.offset());
  return t;
}

/// Ordered collection of named tensors.
struct Bundle {
  struct Entry {
    std::string name;
    Tensor<double> tensor;
    DType dtype = DType::F64;
  };
  std::vector<Entry> entries;

  void add(std::string name, Tensor<double> t, DType dtype = DType::F64) {
    entries.push_back({std::move(name), std::move(t), dtype});
  }

  const Tensor<double>* find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  const Tensor<double>& at(std::string_view name) const {
    if (auto* t = find(name)) return *t;
    throw DataError("bundle has no tensor named '" + std::string(name) + "'");
  }
};

inline std::string encode_bundle(const Bundle& b) {
  std::string out = "LBDL";
  detail::put_le(out, kFormatVersion, 2);
  detail::put_le(out, 0, 2);
  detail::put_le(out, b.entries.size(), 4);
  for (const auto& e : b.entries) {
    detail::put_le(out, e.name.size(), 4);
    out.append(e.name);
    encode_tensor(out, e.tensor, e.dtype);
  }
  return out;
}

inline Bundle decode_bundle(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(4) != "LBDL") throw ParseError("bad bundle magic", 0);
  const auto version = in.le(2);
  if (version != kFormatVersion) throw ParseError("unsupported bundle version " + std::to_string(version), 4);
  in.le(2);
  const auto count = in.le(4);
  Bundle b;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.le(4);
    std::string name(in.take(static_cast<std::size_t>(len)));
    const auto at = in.offset();
    in.need(7);
    const auto dtype = static_cast<unsigned char>(bytes[at + 6]);
    auto t = decode_tensor(in);
    b.add(std::move(name), std::move(t), dtype == 1 ? DType::F32 : DType::F64);
  }
  if (!in.done()) throw ParseError("trailing bytes after bundle", in.offset());
  return b;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

inline Tensor<double> read_tensor(const std::string& path) { return decode_tensor(read_file(path)); }

inline void write_tensor(const std::string& path, const Tensor<double>& t, DType dtype = DType::F64) {
  write_file(path, encode_tensor(t, dtype));
}

inline Bundle read_bundle(const std::string& path) { return decode_bundle(read_file(path)); }

inline void write_bundle(const std::string& path, const Bundle& b) { write_file(path, encode_bundle(b)); }

/// Binary PPM (P6) from an H×W×3 image with values in [0,1].
inline std::string encode_ppm(const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("PPM export needs an H×W×3 image");
  std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
  for (double v : image.values()) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out.push_back(static_cast<char>(static_cast<unsigned char>(c * 255.0 + 0.5)));
  }
  return out;
}

/// Lines of a text file, without terminators; a trailing empty line is dropped.
inline std::vector<std::string> read_lines(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

}  // namespace lois
