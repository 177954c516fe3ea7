#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fdlab/core/error.hpp"
#include "fdlab/core/tensor.hpp"

namespace fdlab {

/// 64-bit FNV-1a. Used for content hashes in manifests, never for security.
class Fnv1a {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update(const Tensor<T>& t) {
    for (std::size_t d : t.shape()) {
      std::uint64_t v = d;
      update(&v, sizeof v);
    }
    for (T x : t) {
      double v = static_cast<double>(x);
      update(&v, sizeof v);
    }
  }
  std::uint64_t digest() const { return h_; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h_;
    return os.str();
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_string(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

inline std::string hash_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hash_string(ss.str());
}

/// Binary archive of named tensors. Values are stored as little-endian
/// float64 so float and double networks round-trip bit-exactly.
///
/// Layout: "FDLA" u32 version, u64 count, then per entry:
/// u64 name_len, name bytes, u64 rank, u64 dims[rank], f64 values[numel].
class TensorArchive {
 public:
  struct Entry {
    std::string name;
    Tensor<double> value;
  };

  template <typename T>
  void add(std::string name, const Tensor<T>& t) {
    entries_.push_back({std::move(name), t.template cast<double>()});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor<double>& at(std::string_view name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.value;
    throw LookupError("archive has no entry '" + std::string(name) + "'");
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write("FDLA", 4);
    write_u64(out, kVersion);
    write_u64(out, entries_.size());
    for (const auto& e : entries_) {
      write_u64(out, e.name.size());
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u64(out, e.value.rank());
      for (std::size_t d : e.value.shape()) write_u64(out, d);
      out.write(reinterpret_cast<const char*>(e.value.data()), static_cast<std::streamsize>(e.value.size() * 8));
    }
    if (!out) throw Error("failed writing " + path.string());
  }

  static TensorArchive load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open archive " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FDLA", 4) != 0) throw LoadError("not a tensor archive: " + path.string());
    if (read_u64(in, path) != kVersion) throw LoadError("unsupported archive version: " + path.string());
    TensorArchive ar;
    const std::uint64_t count = read_u64(in, path);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string name(read_u64(in, path), '\0');
      in.read(name.data(), static_cast<std::streamsize>(name.size()));
      Shape shape(read_u64(in, path));
      for (auto& d : shape) d = read_u64(in, path);
      Tensor<double> t(shape);
      in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
      if (!in) throw LoadError("truncated archive: " + path.string());
      ar.entries_.push_back({std::move(name), std::move(t)});
    }
    return ar;
  }

 private:
  static constexpr std::uint64_t kVersion = 1;

  static void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  static std::uint64_t read_u64(std::ifstream& in, const std::filesystem::path& path) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw LoadError("truncated archive: " + path.string());
    return v;
  }

  std::vector<Entry> entries_;
};

}  // namespace fdlab
