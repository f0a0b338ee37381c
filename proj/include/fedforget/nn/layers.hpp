#pragma once

// Per-layer kernels. Batched tensors are [B, ...] row-major; images are CHW.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace ff::kernels {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

struct ConvGeom {
  std::size_t channels, height, width;  // image the kernel slides over
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;

  static ConvGeom make(std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                       std::size_t s, std::size_t p) {
    return {c, h, w, k, s, p, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
  }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// col[(c*k + ki)*k + kj][oh*out_w + ow] = img[c][oh*s - p + ki][ow*s - p + kj]
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* dst = col + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = long(oh * g.stride + ki) - long(g.pad);
          T* drow = dst + oh * g.out_w;
          if (ih < 0 || ih >= long(g.height)) {
            std::fill(drow, drow + g.out_w, T(0));
            continue;
          }
          const T* srow = img + (c * g.height + std::size_t(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = long(ow * g.stride + kj) - long(g.pad);
            drow[ow] = (iw < 0 || iw >= long(g.width)) ? T(0) : srow[iw];
          }
        }
      }
}

// Adjoint of im2col: accumulates into img (which the caller zeroes).
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* src = col + ((c * g.kernel + ki) * g.kernel + kj) * cols;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = long(oh * g.stride + ki) - long(g.pad);
          if (ih < 0 || ih >= long(g.height)) continue;
          T* drow = img + (c * g.height + std::size_t(ih)) * g.width;
          const T* srow = src + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = long(ow * g.stride + kj) - long(g.pad);
            if (iw >= 0 && iw < long(g.width)) drow[iw] += srow[ow];
          }
        }
      }
}

// Convolution over a batch. w: [cout, cin*k*k], y: [B, cout, out_h, out_w].
template <typename T>
void conv_forward(const T* x, std::size_t batch, const ConvGeom& g, const T* w,
                  const T* b, std::size_t cout, T* y, std::vector<T>& col) {
  col.resize(g.col_rows() * g.col_cols());
  CMatMap<T> W(w, cout, g.col_rows());
  const std::size_t in_sz = g.channels * g.height * g.width, out_sz = cout * g.col_cols();
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(x + n * in_sz, g, col.data());
    MatMap<T> Y(y + n * out_sz, cout, g.col_cols());
    Y.noalias() = W * CMatMap<T>(col.data(), g.col_rows(), g.col_cols());
    for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += b[o];
  }
}

template <typename T>
void conv_backward(const T* x, std::size_t batch, const ConvGeom& g, const T* w,
                   std::size_t cout, const T* dy, T* dw, T* db, T* dx,
                   std::vector<T>& col) {
  col.resize(g.col_rows() * g.col_cols());
  CMatMap<T> W(w, cout, g.col_rows());
  const std::size_t in_sz = g.channels * g.height * g.width, out_sz = cout * g.col_cols();
  for (std::size_t n = 0; n < batch; ++n) {
    CMatMap<T> dY(dy + n * out_sz, cout, g.col_cols());
    if (dw) {
      im2col(x + n * in_sz, g, col.data());
      MatMap<T>(dw, cout, g.col_rows()).noalias() +=
          dY * CMatMap<T>(col.data(), g.col_rows(), g.col_cols()).transpose();
      for (std::size_t o = 0; o < cout; ++o) db[o] += dY.row(o).sum();
    }
    if (dx) {
      MatMap<T> dcol(col.data(), g.col_rows(), g.col_cols());
      dcol.noalias() = W.transpose() * dY;
      col2im(col.data(), g, dx + n * in_sz);
    }
  }
}

// Transposed convolution: the adjoint of a convolution whose input image is
// this layer's output. `g` describes that convolution (channels = cout, image
// = output size, out_h/out_w = this layer's input size). w: [cin, cout*k*k].
template <typename T>
void deconv_forward(const T* x, std::size_t batch, std::size_t cin, const ConvGeom& g,
                    const T* w, const T* b, T* y, std::vector<T>& col) {
  col.resize(g.col_rows() * g.col_cols());
  CMatMap<T> W(w, cin, g.col_rows());
  const std::size_t in_sz = cin * g.col_cols(), out_sz = g.channels * g.height * g.width;
  const std::size_t plane = g.height * g.width;
  for (std::size_t n = 0; n < batch; ++n) {
    MatMap<T> C(col.data(), g.col_rows(), g.col_cols());
    C.noalias() = W.transpose() * CMatMap<T>(x + n * in_sz, cin, g.col_cols());
    T* yn = y + n * out_sz;
    std::fill(yn, yn + out_sz, T(0));
    col2im(col.data(), g, yn);
    for (std::size_t o = 0; o < g.channels; ++o)
      for (std::size_t i = 0; i < plane; ++i) yn[o * plane + i] += b[o];
  }
}

template <typename T>
void deconv_backward(const T* x, std::size_t batch, std::size_t cin, const ConvGeom& g,
                     const T* w, const T* dy, T* dw, T* db, T* dx, std::vector<T>& col) {
  col.resize(g.col_rows() * g.col_cols());
  CMatMap<T> W(w, cin, g.col_rows());
  const std::size_t in_sz = cin * g.col_cols(), out_sz = g.channels * g.height * g.width;
  const std::size_t plane = g.height * g.width;
  for (std::size_t n = 0; n < batch; ++n) {
    const T* dyn = dy + n * out_sz;
    im2col(dyn, g, col.data());
    CMatMap<T> dC(col.data(), g.col_rows(), g.col_cols());
    if (dw) {
      MatMap<T>(dw, cin, g.col_rows()).noalias() +=
          CMatMap<T>(x + n * in_sz, cin, g.col_cols()) * dC.transpose();
      for (std::size_t o = 0; o < g.channels; ++o) {
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += dyn[o * plane + i];
        db[o] += s;
      }
    }
    if (dx) MatMap<T>(dx + n * in_sz, cin, g.col_cols()).noalias() = W * dC;
  }
}

// y[B, out] = x[B, in] * w^T + b, w: [out, in]
template <typename T>
void linear_forward(const T* x, std::size_t batch, std::size_t in, std::size_t out,
                    const T* w, const T* b, T* y) {
  MatMap<T> Y(y, batch, out);
  Y.noalias() = CMatMap<T>(x, batch, in) * CMatMap<T>(w, out, in).transpose();
  Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b, out);
}

template <typename T>
void linear_backward(const T* x, std::size_t batch, std::size_t in, std::size_t out,
                     const T* w, const T* dy, T* dw, T* db, T* dx) {
  CMatMap<T> dY(dy, batch, out);
  if (dw) {
    MatMap<T>(dw, out, in).noalias() += dY.transpose() * CMatMap<T>(x, batch, in);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db, out) += dY.colwise().sum();
  }
  if (dx) MatMap<T>(dx, batch, in).noalias() = dY * CMatMap<T>(w, out, in);
}

// 2x2 / stride-2 pooling over planes; `planes` = B*C.
template <typename T>
void max_pool2_forward(const T* x, std::size_t planes, std::size_t h, std::size_t w, T* y,
                       std::uint32_t* arg) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            std::size_t k = (2 * i + di) * w + 2 * j + dj;
            if (xp[k] > xp[best]) best = k;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = xp[best];
        arg[o] = std::uint32_t(p * h * w + best);
      }
  }
}

template <typename T>
void avg_pool2_forward(const T* x, std::size_t planes, std::size_t h, std::size_t w, T* y) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t r = 2 * i * w + 2 * j;
        y[(p * oh + i) * ow + j] = T(0.25) * (xp[r] + xp[r + 1] + xp[r + w] + xp[r + w + 1]);
      }
  }
}

template <typename T>
void avg_pool2_backward(const T* dy, std::size_t planes, std::size_t h, std::size_t w, T* dx) {
  const std::size_t oh = h / 2, ow = w / 2;
  std::fill(dx, dx + planes * h * w, T(0));
  for (std::size_t p = 0; p < planes; ++p) {
    T* dxp = dx + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const T g = T(0.25) * dy[(p * oh + i) * ow + j];
        const std::size_t r = 2 * i * w + 2 * j;
        dxp[r] += g;
        dxp[r + 1] += g;
        dxp[r + w] += g;
        dxp[r + w + 1] += g;
      }
  }
}

}  // namespace ff::kernels
