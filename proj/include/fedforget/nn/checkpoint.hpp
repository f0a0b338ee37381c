#pragma once

// Checkpoint container, version 1. All integers little-endian.
//
//   offset  type          field
//   0       char[4]       magic "FFCK"
//   4       u32           format version (1)
//   8       u32 + bytes   arch_id (length-prefixed UTF-8)
//   ..      u32 + bytes   seed lineage (length-prefixed UTF-8, free text such
//                         as "model=7;round=12")
//   ..      u8            scalar tag: 0 = f32, 1 = f64
//   ..      u32           entry count N
//   N times:
//           u32 + bytes   entry name
//           u32           rank R
//           R x u32       dims
//           prod(dims) x  scalar values, row-major
//   end-8   u64           FNV-1a 64 of every preceding byte
//
// Readers reject bad magic, unknown versions, truncated files and hash
// mismatches.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/hash.hpp"
#include "fedforget/nn/params.hpp"

namespace ff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'F', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParamVector<float> params{""};
  std::string lineage;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void put(T v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    put(std::uint32_t(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::string path, std::size_t end)
      : b_(b), path_(std::move(path)), end_(end) {}
  void raw(void* p, std::size_t n) {
    FF_EXPECT(pos_ + n <= end_, LoadError, "truncated checkpoint: " + path_);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    auto n = get<std::uint32_t>();
    FF_EXPECT(pos_ + n <= end_, LoadError, "truncated checkpoint: " + path_);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<unsigned char>& b_;
  std::string path_;
  std::size_t pos_ = 0, end_;
};

}  // namespace detail

template <typename T>
std::vector<unsigned char> encode_checkpoint(const ParamVector<T>& params,
                                             const std::string& lineage) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.str(params.arch_id());
  w.str(lineage);
  w.put(std::uint8_t(std::is_same_v<T, float> ? 0 : 1));
  w.put(std::uint32_t(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.put(std::uint32_t(t.rank()));
    for (auto d : t.shape) w.put(std::uint32_t(d));
    w.raw(t.data.data(), t.data.size() * sizeof(T));
  }
  Fnv1a h;
  h.update(w.bytes().data(), w.bytes().size());
  w.put(h.digest());
  return std::move(w.bytes());
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamVector<T>& params,
                     const std::string& lineage = "") {
  auto bytes = encode_checkpoint(params, lineage);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    FF_EXPECT(!ec, IoError, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FF_EXPECT(out.good(), IoError, "cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  FF_EXPECT(out.good(), IoError, "failed writing checkpoint: " + path.string());
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes,
                                    const std::string& path = "<memory>") {
  FF_EXPECT(bytes.size() >= 4 + 4 + 8, LoadError, "truncated checkpoint: " + path);
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  Fnv1a h;
  h.update(bytes.data(), body);
  detail::ByteReader r(bytes, path, body);
  char magic[4];
  r.raw(magic, 4);
  FF_EXPECT(std::memcmp(magic, kCheckpointMagic, 4) == 0, LoadError,
            "not a checkpoint file: " + path);
  const auto version = r.get<std::uint32_t>();
  FF_EXPECT(version == kCheckpointVersion, LoadError,
            "unsupported checkpoint version " + std::to_string(version) + ": " + path);
  FF_EXPECT(h.digest() == stored, LoadError, "checkpoint hash mismatch: " + path);
  Checkpoint ck;
  ck.params = ParamVector<float>(r.str());
  ck.lineage = r.str();
  const auto tag = r.get<std::uint8_t>();
  FF_EXPECT(tag <= 1, LoadError, "unknown scalar tag in " + path);
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < n; ++e) {
    auto name = r.str();
    Shape s(r.get<std::uint32_t>());
    for (auto& d : s) d = r.get<std::uint32_t>();
    Tensor<float> t(s);
    if (tag == 0) {
      r.raw(t.data.data(), t.numel() * sizeof(float));
    } else {
      std::vector<double> tmp(t.numel());
      r.raw(tmp.data(), tmp.size() * sizeof(double));
      for (std::size_t k = 0; k < tmp.size(); ++k) t.data[k] = float(tmp[k]);
    }
    ck.params.add(name, std::move(t));
  }
  FF_EXPECT(r.done(), LoadError, "trailing bytes in checkpoint: " + path);
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  FF_EXPECT(in.good(), LoadError, "cannot open checkpoint: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace ff
