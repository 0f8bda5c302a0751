#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <fmt/core.h>

#include "cdistill/errors.hpp"
#include "cdistill/policy.hpp"
#include "cdistill/table.hpp"

namespace cdistill {

/// Read/write failures on persisted artifacts.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Little-endian writer into an in-memory buffer.
class ByteWriter {
 public:
  void bytes(std::string_view b) { out_.append(b); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  /// u64 length, then the bytes
  void str(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  void table(const Table& t) {
    u64(t.rows());
    u64(t.cols());
    for (double x : t.data()) f64(x);
  }
  const std::string& str() const noexcept { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  void expect(std::string_view magic) {
    if (data_.compare(pos_, magic.size(), magic) != 0)
      throw IoError(fmt::format("{}: bad magic, expected '{}'", source_, magic));
    pos_ += magic.size();
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > data_.size() - pos_) throw IoError(fmt::format("{}: string length {} exceeds the file", source_, n));
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Table table() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols * 8 > data_.size() - pos_)
      throw IoError(fmt::format("{}: table shape {}x{} does not fit the file", source_, rows, cols));
    Table t(rows, cols);
    for (double& x : t.data()) x = f64();
    return t;
  }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  void expect_end() const {
    if (!at_end()) throw IoError(fmt::format("{}: {} trailing bytes", source_, data_.size() - pos_));
  }

 private:
  std::uint64_t get(int n) {
    if (pos_ + static_cast<std::size_t>(n) > data_.size()) throw IoError(fmt::format("{}: truncated file", source_));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

/// Writes to `path.tmp` and renames over `path`, so readers never see a
/// half-written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError(fmt::format("short write to '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline constexpr std::uint32_t kPolicyFormatVersion = 1;

/// Policy file: "CDPL", u32 version, u64 rows, u64 cols, f64 floor, then
/// rows*cols f64 logits row-major. All little-endian.
inline std::string serialize_policy(const SoftmaxPolicy& p) {
  ByteWriter w;
  w.bytes("CDPL");
  w.u32(kPolicyFormatVersion);
  w.u64(p.num_states());
  w.u64(p.vocab_size());
  w.f64(p.floor());
  for (double x : p.logits().data()) w.f64(x);
  return w.str();
}

inline SoftmaxPolicy deserialize_policy(std::string data, std::string source = "<policy>") {
  ByteReader r(std::move(data), std::move(source));
  r.expect("CDPL");
  if (const auto v = r.u32(); v != kPolicyFormatVersion) throw IoError(fmt::format("unsupported policy version {}", v));
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  const double floor = r.f64();
  if (rows > (1u << 24) || cols > (1u << 24)) throw IoError("policy shape out of range");
  Table logits(rows, cols);
  for (double& x : logits.data()) x = r.f64();
  r.expect_end();
  return SoftmaxPolicy(std::move(logits), floor);
}

inline void save_policy(const std::filesystem::path& path, const SoftmaxPolicy& p) {
  write_file_atomic(path, serialize_policy(p));
}

inline SoftmaxPolicy load_policy(const std::filesystem::path& path) {
  return deserialize_policy(read_file(path), path.string());
}

}  // namespace cdistill
