#include "jepa/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "jepa/types.hpp"

namespace jepa {

std::uint64_t TensorEntry::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void TensorFile::add(TensorEntry entry) {
  if (find(entry.name)) throw FormatError("duplicate tensor name '" + entry.name + "'");
  if (entry.dtype != DType::kF32 && entry.dtype != DType::kF64) throw FormatError("unknown dtype for " + entry.name);
  if (entry.element_count() != entry.data.size()) {
    throw FormatError("tensor '" + entry.name + "' dims do not match its data length");
  }
  entries_.push_back(std::move(entry));
}

void TensorFile::add(std::string name, std::vector<std::uint64_t> dims, std::vector<double> data, DType dtype) {
  add(TensorEntry{std::move(name), dtype, std::move(dims), std::move(data)});
}

const TensorEntry* TensorFile::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const TensorEntry& TensorFile::at(std::string_view name) const {
  const auto* e = find(name);
  if (!e) throw FormatError("tensor '" + std::string(name) + "' missing from file");
  return *e;
}

namespace {

template <class T>
void put(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("tensor file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string TensorFile::encode() const {
  std::string out = "JTNS";
  put<std::uint32_t>(out, kTensorFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put<std::uint64_t>(out, d);
    for (double v : e.data) {
      if (e.dtype == DType::kF64) {
        put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  return out;
}

TensorFile TensorFile::decode(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "JTNS") throw FormatError("not a tensor file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion) {
    throw FormatError("unsupported tensor file version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  TensorFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    const auto name_len = r.get<std::uint32_t>();
    e.name = std::string(r.take(name_len));
    const auto dtype = r.get<std::uint32_t>();
    if (dtype != 1 && dtype != 2) throw FormatError("unknown dtype tag " + std::to_string(dtype) + " for " + e.name);
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      e.dims.push_back(r.get<std::uint64_t>());
      if (e.dims.back() != 0 && n > std::numeric_limits<std::uint64_t>::max() / e.dims.back()) {
        throw FormatError("tensor '" + e.name + "' size overflows");
      }
      n *= e.dims.back();
    }
    const std::size_t width = e.dtype == DType::kF64 ? 8 : 4;
    if (n > r.remaining() / width) throw FormatError("tensor file truncated in '" + e.name + "'");
    e.data.resize(static_cast<std::size_t>(n));
    for (auto& v : e.data) {
      v = e.dtype == DType::kF64 ? std::bit_cast<double>(r.get<std::uint64_t>())
                                 : static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
    }
    file.add(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor");
  return file;
}

void TensorFile::save(const std::filesystem::path& path) const {
  const std::string bytes = encode();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tensor file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace jepa
