#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace disperse::io {

/// Little-endian binary writer/reader for the container files (datasets,
/// splits, model snapshots). All multi-byte fields are written in host order;
/// the formats are documented in the README and target x86-64/aarch64 LE.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path);
  ~BinaryWriter();

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t n);
  void doubles(const std::vector<double>& v);
  void str(const std::string& s);  // u64 length + raw bytes

  bool good() const { return out_.good(); }
  void close();

 private:
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void bytes(void* data, std::size_t n);
  std::vector<double> doubles(std::size_t n);
  std::string str();

  /// Reads and checks a 4-byte magic + u32 version field.
  void expect_magic(const char magic[4], std::uint32_t version);

 private:
  std::ifstream in_;
  std::string path_;
};

void ensure_parent_dir(const std::string& path);

}  // namespace disperse::io
