#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include <Eigen/Dense>

namespace oct::detail {

// Stride-1 "same" cross-correlation with zero padding, computed as
// im2col + GEMM over pixel chunks. The chunking is fixed by the shapes
// alone, so accumulation order (and therefore the float result) does not
// depend on thread count.
//
// Geometry: out[o,y,x] = sum_{c,i,j} in[c, y+i-cy, x+j-cx] * k[o,c,i,j],
// with zeros outside bounds. cy/cx are explicit so the input-gradient
// pass can reuse this kernel with a flipped-transposed filter bank.

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_chunk_pixels(int taps, int hw, size_t scalar_size) {
  // Keep the im2col panel around 8 MB.
  long budget = (8l << 20) / long(scalar_size);
  long px = std::max(256l, budget / std::max(1, taps));
  return int(std::min<long>(px, hw));
}

// Fills col[t, p-p0] = in[c, y+i-cy, x+j-cx] for p in [p0,p1), t = (c,i,j).
template <typename T>
void im2col_chunk(const T* in, int cin, int h, int w, int kh, int kw, int cy,
                  int cx, int p0, int p1, T* col) {
  const int n = p1 - p0;
  for (int c = 0; c < cin; ++c) {
    const T* plane = in + size_t(c) * h * w;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* row = col + (size_t(c) * kh * kw + size_t(i) * kw + j) * n;
        const int dy = i - cy, dx = j - cx;
        int p = p0;
        while (p < p1) {
          const int y = p / w, x = p % w;
          const int seg = std::min(p1, (y + 1) * w) - p;  // rest of this image row
          const int ys = y + dy;
          if (ys < 0 || ys >= h) {
            std::fill(row + (p - p0), row + (p - p0) + seg, T(0));
          } else {
            const T* src = plane + size_t(ys) * w;
            for (int q = 0; q < seg; ++q) {
              const int xs = x + q + dx;
              row[p - p0 + q] = (xs >= 0 && xs < w) ? src[xs] : T(0);
            }
          }
          p += seg;
        }
      }
    }
  }
}

// out[cout, h*w] (row-major) = kmat[cout, taps] * im2col(in); bias may be null.
template <typename T>
void conv2d_forward(const T* in, int cin, int h, int w, const T* kmat, int cout,
                    int kh, int kw, int cy, int cx, const T* bias, T* out) {
  const int hw = h * w;
  const int taps = cin * kh * kw;
  const int chunk = conv_chunk_pixels(taps, hw, sizeof(T));
  const int nchunks = (hw + chunk - 1) / chunk;

#pragma omp parallel
  {
    std::vector<T> col(size_t(taps) * chunk);
#pragma omp for schedule(static)
    for (int ci = 0; ci < nchunks; ++ci) {
      const int p0 = ci * chunk;
      const int p1 = std::min(hw, p0 + chunk);
      const int n = p1 - p0;
      im2col_chunk(in, cin, h, w, kh, kw, cy, cx, p0, p1, col.data());
      Eigen::Map<const MatRM<T>> km(kmat, cout, taps);
      Eigen::Map<const MatRM<T>> cm(col.data(), taps, n);
      Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>> om(out + p0, cout, n,
                                                       Eigen::OuterStride<>(hw));
      om.noalias() = km * cm;
    }
  }
  if (bias) {
    for (int o = 0; o < cout; ++o) {
      T* row = out + size_t(o) * hw;
      const T b = bias[o];
      for (int p = 0; p < hw; ++p) row[p] += b;
    }
  }
}

// dkmat[cout, taps] += dout[cout, hw] * im2col(in)^T, accumulated in fixed
// chunk order (per-chunk partials, summed serially, so threading never
// changes the result). dbias[o] += sum_p dout[o,p] when dbias != null.
template <typename T>
void conv2d_backward_filter(const T* in, int cin, int h, int w, const T* dout,
                            int cout, int kh, int kw, int cy, int cx, T* dkmat,
                            T* dbias) {
  const int hw = h * w;
  const int taps = cin * kh * kw;
  const int chunk = conv_chunk_pixels(taps, hw, sizeof(T));
  const int nchunks = (hw + chunk - 1) / chunk;
  std::vector<T> partial(size_t(nchunks) * cout * taps);

#pragma omp parallel
  {
    std::vector<T> col(size_t(taps) * chunk);
#pragma omp for schedule(static)
    for (int ci = 0; ci < nchunks; ++ci) {
      const int p0 = ci * chunk;
      const int p1 = std::min(hw, p0 + chunk);
      const int n = p1 - p0;
      im2col_chunk(in, cin, h, w, kh, kw, cy, cx, p0, p1, col.data());
      Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>> dm(
          dout + p0, cout, n, Eigen::OuterStride<>(hw));
      Eigen::Map<const MatRM<T>> cm(col.data(), taps, n);
      Eigen::Map<MatRM<T>> pm(partial.data() + size_t(ci) * cout * taps, cout,
                              taps);
      pm.noalias() = dm * cm.transpose();
    }
  }
  Eigen::Map<MatRM<T>> acc(dkmat, cout, taps);
  for (int ci = 0; ci < nchunks; ++ci)
    acc += Eigen::Map<const MatRM<T>>(partial.data() + size_t(ci) * cout * taps,
                                      cout, taps);
  if (dbias) {
    for (int o = 0; o < cout; ++o) {
      const T* row = dout + size_t(o) * hw;
      T s = 0;
      for (int p = 0; p < hw; ++p) s += row[p];
      dbias[o] += s;
    }
  }
}

// din += conv(dout, K'), where K'[c,o,i',j'] = k[o,c,kh-1-i',kw-1-j'] and the
// center moves to (kh-1-cy, kw-1-cx). Reuses the forward kernel.
template <typename T>
void conv2d_backward_input(const T* dout, int cout, int h, int w, const T* kmat,
                           int cin, int kh, int kw, int cy, int cx, T* din) {
  std::vector<T> kt(size_t(cin) * cout * kh * kw);
  for (int o = 0; o < cout; ++o)
    for (int c = 0; c < cin; ++c)
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j)
          kt[((size_t(c) * cout + o) * kh + (kh - 1 - i)) * kw + (kw - 1 - j)] =
              kmat[((size_t(o) * cin + c) * kh + i) * kw + j];
  std::vector<T> tmp(size_t(cin) * h * w);
  conv2d_forward(dout, cout, h, w, kt.data(), cin, kh, kw, kh - 1 - cy,
                 kw - 1 - cx, static_cast<const T*>(nullptr), tmp.data());
  const size_t total = size_t(cin) * h * w;
  for (size_t p = 0; p < total; ++p) din[p] += tmp[p];
}

}  // namespace oct::detail
