#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fedforget/core/error.hpp"
#include "fedforget/skyeye/skyeye.hpp"

namespace ff {

// 8-bit image: gray for 1 channel, RGB for 3. Row-major, interleaved.
struct Image8 {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<unsigned char> pixels;
};

inline void write_png(const std::string& path, const Image8& img) {
  FF_EXPECT(img.channels == 1 || img.channels == 3, ContractError, "PNG needs 1 or 3 channels");
  FF_EXPECT(img.pixels.size() == img.width * img.height * img.channels && img.width && img.height,
            ContractError, "PNG buffer size mismatch");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  FF_EXPECT(f, IoError, "cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(f);
    throw IoError("libpng failed writing " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = img.width * img.channels;
  for (std::size_t r = 0; r < img.height; ++r)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  const bool bad = std::fclose(f) != 0;
  FF_EXPECT(!bad, IoError, "error closing " + path);
}

// One row per class, `per_class` samples per row, 2px gutters. Sample i of
// class c uses the same noise stream as class_fidelity(..., c, ..., seed).
inline Image8 sample_grid(const ParamVector<float>& G, const std::vector<int>& classes,
                          std::size_t per_class, std::uint64_t seed) {
  FF_EXPECT(!classes.empty() && per_class >= 1, ContractError, "empty grid");
  const auto& arch = network_for<float>(G.arch_id()).arch();
  const std::size_t gap = 2;
  Image8 img;
  std::size_t ch = 0, h = 0, w = 0;
  for (std::size_t row = 0; row < classes.size(); ++row) {
    const int c = classes[row];
    FF_EXPECT(c >= 0 && std::size_t(c) < arch.class_count, ContractError, "grid class out of range");
    auto rng = make_rng(seed, {0xf1de, std::uint64_t(c)});
    auto z = sample_noise(per_class, arch.input[0], rng);
    std::vector<int> y(per_class, c);
    auto x = gen_forward(G, z, y);
    if (row == 0) {
      FF_EXPECT(x.shape.size() == 4, ContractError, "generator output is not an image batch");
      ch = x.shape[1], h = x.shape[2], w = x.shape[3];
      img.channels = ch == 1 ? 1 : 3;
      img.width = per_class * (w + gap) + gap;
      img.height = classes.size() * (h + gap) + gap;
      img.pixels.assign(img.width * img.height * img.channels, 0);
    }
    for (std::size_t i = 0; i < per_class; ++i)
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < w; ++xx)
          for (std::size_t k = 0; k < img.channels; ++k) {
            const float v = x.data[((i * ch + std::min(k, ch - 1)) * h + yy) * w + xx];
            const std::size_t px = gap + i * (w + gap) + xx, py = gap + row * (h + gap) + yy;
            img.pixels[(py * img.width + px) * img.channels + k] =
                (unsigned char)std::lround(std::clamp(v, 0.f, 1.f) * 255.f);
          }
  }
  return img;
}

inline void render_grid(const ParamVector<float>& G, const std::vector<int>& classes,
                        std::size_t per_class, const std::string& path, std::uint64_t seed = 0) {
  write_png(path, sample_grid(G, classes, per_class, seed));
}

}  // namespace ff
