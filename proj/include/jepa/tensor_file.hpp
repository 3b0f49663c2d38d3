#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace jepa {

/// Named-tensor container ("JTNS").
///
/// Layout, all integers little-endian:
///   magic "JTNS" | version u32 | entry count u32 |
///   per entry: name length u32, UTF-8 name bytes, dtype u32 (f32=1, f64=2),
///              rank u32, dims u64[rank], row-major data
enum class DType : std::uint32_t { kF32 = 1, kF64 = 2 };

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorEntry {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // f32 entries are widened on read

  std::uint64_t element_count() const;
};

class TensorFile {
 public:
  /// Throws FormatError on duplicate names or dims/data disagreement.
  void add(TensorEntry entry);
  void add(std::string name, std::vector<std::uint64_t> dims, std::vector<double> data, DType dtype = DType::kF64);

  const TensorEntry* find(std::string_view name) const;
  /// Throws FormatError when absent.
  const TensorEntry& at(std::string_view name) const;
  const std::vector<TensorEntry>& entries() const { return entries_; }

  std::string encode() const;
  static TensorFile decode(std::string_view bytes);

  /// Written to a temporary file and renamed into place.
  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);

 private:
  std::vector<TensorEntry> entries_;
};

}  // namespace jepa
