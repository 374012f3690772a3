#include "disperse/io.hpp"

#include <cstring>
#include <filesystem>
#include <stdexcept>

namespace disperse::io {

BinaryWriter::BinaryWriter(const std::string& path) : path_(path) {
  ensure_parent_dir(path);
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open for writing: " + path);
}

BinaryWriter::~BinaryWriter() = default;

void BinaryWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void BinaryWriter::f64(double v) { bytes(&v, sizeof v); }

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void BinaryWriter::doubles(const std::vector<double>& v) {
  bytes(v.data(), v.size() * sizeof(double));
}

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  bytes(s.data(), s.size());
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) throw std::runtime_error("write failed: " + path_);
}

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
  in_.open(path, std::ios::binary);
  if (!in_) throw std::runtime_error("cannot open for reading: " + path);
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

void BinaryReader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in_) throw std::runtime_error("truncated or unreadable file: " + path_);
}

std::vector<double> BinaryReader::doubles(std::size_t n) {
  std::vector<double> v(n);
  bytes(v.data(), n * sizeof(double));
  return v;
}

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > (1ull << 32)) throw std::runtime_error("corrupt string field: " + path_);
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

void BinaryReader::expect_magic(const char magic[4], std::uint32_t version) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error("bad magic in " + path_);
  const std::uint32_t v = u32();
  if (v != version)
    throw std::runtime_error("unsupported version " + std::to_string(v) +
                             " in " + path_);
}

void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace disperse::io
