#pragma once

// Dataset loaders.
//
// Root directory layout:
//   <root>/mnist/train-images-idx3-ubyte   standard IDX files, uncompressed
//   <root>/mnist/train-labels-idx1-ubyte
//   <root>/mnist/t10k-images-idx3-ubyte
//   <root>/mnist/t10k-labels-idx1-ubyte
//   <root>/att_faces/s1 .. s40/1.pgm .. 10.pgm   binary PGM (P5); images are
//                                                resampled to 64x64, image 10
//                                                of every identity is held out
// `synthetic` needs no files.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/core/rng.hpp"
#include "fedforget/data/dataset.hpp"

namespace ff {

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw LoadError("truncated IDX header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::ifstream open_binary(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open dataset file " + p.string());
  return in;
}

inline LabeledDataset read_idx_pair(const std::filesystem::path& images,
                                    const std::filesystem::path& labels,
                                    const std::string& name) {
  auto img = open_binary(images);
  auto lab = open_binary(labels);
  if (read_be32(img, images.string()) != 0x803)
    throw LoadError("bad IDX image magic in " + images.string());
  const auto n = read_be32(img, images.string());
  const auto rows = read_be32(img, images.string());
  const auto cols = read_be32(img, images.string());
  if (read_be32(lab, labels.string()) != 0x801)
    throw LoadError("bad IDX label magic in " + labels.string());
  if (read_be32(lab, labels.string()) != n)
    throw LoadError("image/label count mismatch in " + labels.string());

  LabeledDataset ds(name, 10, {1, rows, cols});
  ds.reserve(n);
  std::vector<unsigned char> pix(std::size_t(rows) * cols);
  std::vector<float> f(pix.size());
  for (std::uint32_t i = 0; i < n; ++i) {
    char y;
    if (!img.read(reinterpret_cast<char*>(pix.data()), std::streamsize(pix.size())) ||
        !lab.read(&y, 1))
      throw LoadError("truncated IDX data in " + images.string());
    for (std::size_t k = 0; k < pix.size(); ++k) f[k] = float(pix[k]) / 255.0f;
    ds.push_back(f, static_cast<unsigned char>(y));
  }
  return ds;
}

struct Pgm {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;
};

inline Pgm read_pgm(const std::filesystem::path& p) {
  auto in = open_binary(p);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw LoadError("not a binary PGM: " + p.string());
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
      in >> std::ws;
    }
    long v;
    if (!(in >> v)) throw LoadError("malformed PGM header: " + p.string());
    return v;
  };
  Pgm out;
  out.width = std::size_t(next_int());
  out.height = std::size_t(next_int());
  const long maxval = next_int();
  if (maxval <= 0 || maxval > 255) throw LoadError("unsupported PGM depth: " + p.string());
  in.get();
  std::vector<unsigned char> raw(out.width * out.height);
  if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size())))
    throw LoadError("truncated PGM: " + p.string());
  out.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out.pixels[i] = float(raw[i]) / float(maxval);
  return out;
}

inline std::vector<float> resize_bilinear(const Pgm& src, std::size_t h, std::size_t w) {
  if (src.height == h && src.width == w) return src.pixels;
  std::vector<float> out(h * w);
  const double sy = double(src.height) / double(h), sx = double(src.width) / double(w);
  for (std::size_t r = 0; r < h; ++r) {
    double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    auto y0 = std::size_t(y), y1 = std::min(y0 + 1, src.height - 1);
    double fy = y - double(y0);
    for (std::size_t c = 0; c < w; ++c) {
      double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      auto x0 = std::size_t(x), x1 = std::min(x0 + 1, src.width - 1);
      double fx = x - double(x0);
      auto at = [&](std::size_t yy, std::size_t xx) { return double(src.pixels[yy * src.width + xx]); };
      out[r * w + c] = float((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                             fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1)));
    }
  }
  return out;
}

}  // namespace detail

inline DatasetSplits load_mnist(const std::filesystem::path& root) {
  const auto dir = root / "mnist";
  return {detail::read_idx_pair(dir / "train-images-idx3-ubyte",
                                dir / "train-labels-idx1-ubyte", "mnist"),
          detail::read_idx_pair(dir / "t10k-images-idx3-ubyte",
                                dir / "t10k-labels-idx1-ubyte", "mnist")};
}

inline DatasetSplits load_att_faces(const std::filesystem::path& root) {
  constexpr std::size_t kSide = 64;
  const auto dir = root / "att_faces";
  DatasetSplits out{LabeledDataset("att_faces", 40, {1, kSide, kSide}),
                    LabeledDataset("att_faces", 40, {1, kSide, kSide})};
  for (int person = 1; person <= 40; ++person) {
    for (int img = 1; img <= 10; ++img) {
      auto p = dir / ("s" + std::to_string(person)) / (std::to_string(img) + ".pgm");
      auto pgm = detail::read_pgm(p);
      auto px = detail::resize_bilinear(pgm, kSide, kSide);
      (img == 10 ? out.test : out.train).push_back(px, person - 1);
    }
  }
  return out;
}

// Two Gaussian-blob classes on an 8x8 canvas: 256 train / 64 test samples.
inline DatasetSplits make_synthetic(std::uint64_t seed) {
  constexpr std::size_t kSide = 8;
  const ImageShape shape{1, kSide, kSide};
  auto rng = make_rng(seed, {0x5e17});
  std::uniform_real_distribution<double> jitter(-0.75, 0.75);
  std::uniform_real_distribution<double> amp(0.8, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  auto make = [&](std::size_t n) {
    LabeledDataset ds("synthetic", 2, shape);
    ds.reserve(n);
    std::vector<float> img(shape.size());
    for (std::size_t i = 0; i < n; ++i) {
      const int y = int(i % 2);
      const double cy = (y == 0 ? 2.0 : 5.0) + jitter(rng);
      const double cx = (y == 0 ? 2.0 : 5.0) + jitter(rng);
      const double a = amp(rng);
      for (std::size_t r = 0; r < kSide; ++r)
        for (std::size_t c = 0; c < kSide; ++c) {
          double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
          double v = a * std::exp(-d2 / (2 * 1.2 * 1.2)) + noise(rng);
          img[r * kSide + c] = float(std::clamp(v, 0.0, 1.0));
        }
      ds.push_back(img, y);
    }
    return ds;
  };
  DatasetSplits out;
  out.train = make(256);
  out.test = make(64);
  return out;
}

inline DatasetSplits load_dataset(const std::string& name, const std::filesystem::path& root,
                                  std::uint64_t seed = 0) {
  if (name == "mnist") return load_mnist(root);
  if (name == "att_faces") return load_att_faces(root);
  if (name == "synthetic") return make_synthetic(seed);
  throw ConfigError("unknown dataset '" + name + "' (expected mnist, att_faces or synthetic)");
}

}  // namespace ff
