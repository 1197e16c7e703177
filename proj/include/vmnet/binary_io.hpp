#pragma once

// Little-endian binary containers shared by the feature, model and
// checkpoint files.
//
//   VMNF  "VMNF" | u32 version | u32 rows | u32 cols | rows*cols f32, row-major
//   VMPM  "VMPM" | u32 version | u32 count | count * named matrix
//         named matrix = u32 name_len | name bytes | u32 rows | u32 cols | f32 data

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "vmnet/error.hpp"

namespace vmnet {

inline constexpr std::uint32_t kVmnfVersion = 1;
inline constexpr std::uint32_t kVmpmVersion = 1;

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; running off the end raises `short_code`.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, ErrorCode short_code)
      : data_(data), size_(size), short_code_(short_code) {}

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Error(short_code_, "unexpected end of data");
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  ErrorCode short_code_;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

namespace detail {

inline void write_matrix_f32(ByteWriter& w, const Eigen::MatrixXd& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
}

inline Eigen::MatrixXd read_matrix_f32(ByteReader& r) {
  const auto rows = r.u32();
  const auto cols = r.u32();
  if (std::uint64_t{rows} * cols * 4 > r.remaining())
    throw Error(ErrorCode::CorruptFile, "matrix payload shorter than its header");
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f32();
  return m;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_vmnf(const Eigen::MatrixXd& m) {
  ByteWriter w;
  w.bytes("VMNF", 4);
  w.u32(kVmnfVersion);
  detail::write_matrix_f32(w, m);
  return w.buffer();
}

inline Eigen::MatrixXd decode_vmnf(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes.data(), bytes.size(), ErrorCode::CorruptFile);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "VMNF", 4) != 0) throw Error(ErrorCode::CorruptFile, "bad VMNF magic");
  if (r.u32() != kVmnfVersion) throw Error(ErrorCode::CorruptFile, "unsupported VMNF version");
  auto m = detail::read_matrix_f32(r);
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptFile, "trailing bytes after VMNF payload");
  return m;
}

inline void write_vmnf(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  write_file_bytes(path, encode_vmnf(m));
}

inline Eigen::MatrixXd read_vmnf(const std::filesystem::path& path) {
  try {
    return decode_vmnf(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MissingFile) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

/// Ordered name -> matrix collection persisted as VMPM.
using NamedMatrices = std::map<std::string, Eigen::MatrixXd>;

inline void write_vmpm(const std::filesystem::path& path, const NamedMatrices& mats) {
  ByteWriter w;
  w.bytes("VMPM", 4);
  w.u32(kVmpmVersion);
  w.u32(static_cast<std::uint32_t>(mats.size()));
  for (const auto& [name, m] : mats) {
    w.str(name);
    detail::write_matrix_f32(w, m);
  }
  write_file_bytes(path, w.buffer());
}

inline NamedMatrices read_vmpm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size(), ErrorCode::CorruptFile);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "VMPM", 4) != 0) throw Error(ErrorCode::CorruptFile, "bad VMPM magic");
  if (r.u32() != kVmpmVersion) throw Error(ErrorCode::CorruptFile, "unsupported VMPM version");
  NamedMatrices out;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    out.emplace(std::move(name), detail::read_matrix_f32(r));
  }
  return out;
}

}  // namespace vmnet
