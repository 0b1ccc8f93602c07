#pragma once

// Classical preprocessing: point brightness transforms, affine warps with
// nearest/linear/bicubic sampling, 3x3 spatial filters and the 2-D DFT pair.
//
// Every 8-bit output is rounded half away from zero and clamped to [0, 255].

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>

#include "sensoryeval/error.hpp"
#include "sensoryeval/image.hpp"

namespace sensoryeval::imageproc {

template <typename Fn>
Image8 map_pixels(const Image8& img, Fn&& fn) {
  Image8 out = img;
  for (auto& p : out.data()) p = fn(p);
  return out;
}

/// Applies a 256-entry lookup table to every channel.
inline Image8 apply_lut(const Image8& img, const std::array<std::uint8_t, 256>& lut) {
  return map_pixels(img, [&](std::uint8_t v) { return lut[v]; });
}

inline Image8 linear_brightness(const Image8& img, double alpha, double beta) {
  if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = saturate_u8(alpha * v + beta);
  return apply_lut(img, lut);
}

inline Image8 gamma_correct(const Image8& img, double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("gamma must be > 0");
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = saturate_u8(255.0 * std::pow(v / 255.0, gamma));
  return apply_lut(img, lut);
}

/// Logistic 1 / (1 + e^(-z)) without overflow for large |z|.
inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// 255 / (1 + e^(c (th - v))): contrast c around threshold th.
inline Image8 sigmoid_stretch(const Image8& img, double c, double th) {
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = saturate_u8(255.0 * logistic(c * (v - th)));
  return apply_lut(img, lut);
}

struct EqualizeResult {
  Image8 image;
  /// A channel had a single intensity level and was mapped to 0.
  bool degenerate = false;
};

/// CDF-based histogram equalization, each channel independently.
inline EqualizeResult equalize_histogram_ex(const Image8& img) {
  EqualizeResult out{img, false};
  const int ch = img.channels();
  const auto src = img.data();
  auto dst = out.image.data();
  const std::size_t n = static_cast<std::size_t>(img.width()) * img.height();
  for (int c = 0; c < ch; ++c) {
    std::array<std::size_t, 256> hist{};
    for (std::size_t i = 0; i < n; ++i) ++hist[src[i * ch + c]];
    std::array<std::size_t, 256> cdf{};
    std::size_t run = 0;
    std::size_t cdf_min = 0;
    for (int v = 0; v < 256; ++v) {
      run += hist[v];
      cdf[v] = run;
      if (cdf_min == 0 && run > 0) cdf_min = run;
    }
    std::array<std::uint8_t, 256> lut{};
    if (n == cdf_min) {
      out.degenerate = true;
    } else {
      const double span = static_cast<double>(n - cdf_min);
      for (int v = 0; v < 256; ++v) {
        const double num = cdf[v] >= cdf_min ? static_cast<double>(cdf[v] - cdf_min) : 0.0;
        lut[v] = saturate_u8(255.0 * num / span);
      }
    }
    for (std::size_t i = 0; i < n; ++i) dst[i * ch + c] = lut[src[i * ch + c]];
  }
  return out;
}

inline Image8 equalize_histogram(const Image8& img) { return equalize_histogram_ex(img).image; }

/// x' = a1 x + a2 y + a3, y' = b1 x + b2 y + b3 in pixel coordinates
/// (x = column, y = row, origin at the top-left pixel center).
struct AffineMatrix {
  double a1 = 1.0, a2 = 0.0, a3 = 0.0;
  double b1 = 0.0, b2 = 1.0, b3 = 0.0;

  double determinant() const { return a1 * b2 - a2 * b1; }

  std::array<double, 2> apply(double x, double y) const {
    return {a1 * x + a2 * y + a3, b1 * x + b2 * y + b3};
  }

  friend bool operator==(const AffineMatrix&, const AffineMatrix&) = default;
};

inline AffineMatrix identity() { return {}; }

inline AffineMatrix scale(double sx, double sy) {
  if (sx == 0.0 || sy == 0.0) throw ValidationError("scale factors must be non-zero");
  return {sx, 0.0, 0.0, 0.0, sy, 0.0};
}

inline AffineMatrix translate(double dx, double dy) { return {1.0, 0.0, dx, 0.0, 1.0, dy}; }

/// Counter-clockwise in the x-right/y-up sense; angle in degrees.
inline AffineMatrix rotate(double degrees) {
  const double r = degrees * std::numbers::pi / 180.0;
  // Exact at multiples of 90 degrees.
  double c = std::cos(r);
  double s = std::sin(r);
  const double quarter = degrees / 90.0;
  if (quarter == std::floor(quarter)) {
    const long q = ((static_cast<long>(quarter) % 4) + 4) % 4;
    constexpr double cs[4] = {1.0, 0.0, -1.0, 0.0};
    constexpr double sn[4] = {0.0, 1.0, 0.0, -1.0};
    c = cs[q];
    s = sn[q];
  }
  return {c, -s, 0.0, s, c, 0.0};
}

inline AffineMatrix shear(double jx, double jy) { return {1.0, jx, 0.0, jy, 1.0, 0.0}; }

/// The transform that applies `first`, then `second`.
inline AffineMatrix compose(const AffineMatrix& second, const AffineMatrix& first) {
  return {
      second.a1 * first.a1 + second.a2 * first.b1,
      second.a1 * first.a2 + second.a2 * first.b2,
      second.a1 * first.a3 + second.a2 * first.b3 + second.a3,
      second.b1 * first.a1 + second.b2 * first.b1,
      second.b1 * first.a2 + second.b2 * first.b2,
      second.b1 * first.a3 + second.b2 * first.b3 + second.b3,
  };
}

inline bool is_invertible(const AffineMatrix& m) { return std::abs(m.determinant()) > 1e-12; }

inline AffineMatrix inverse(const AffineMatrix& m) {
  if (!is_invertible(m)) throw ValidationError("singular affine matrix");
  const double det = m.determinant();
  AffineMatrix inv;
  inv.a1 = m.b2 / det;
  inv.a2 = -m.a2 / det;
  inv.b1 = -m.b1 / det;
  inv.b2 = m.a1 / det;
  inv.a3 = -(inv.a1 * m.a3 + inv.a2 * m.b3);
  inv.b3 = -(inv.b1 * m.a3 + inv.b2 * m.b3);
  return inv;
}

enum class Interpolation { kNearest, kLinear, kBicubic };

/// Cubic convolution kernel; 1 at 0, 0 at |t| = 1 and |t| >= 2.
inline double cubic_kernel(double t) {
  const double a = std::abs(t);
  if (a < 1.0) return 1.0 - 2.0 * a * a + a * a * a;
  if (a < 2.0) return 4.0 - 8.0 * a + 5.0 * a * a - a * a * a;
  return 0.0;
}

namespace detail {

inline int clamp_index(long v, int n) {
  return static_cast<int>(v < 0 ? 0 : (v >= n ? n - 1 : v));
}

/// Samples channel c of img at real position (x, y); neighbors past the
/// border repeat the edge pixel.
inline double sample(const Image8& img, double x, double y, int c, Interpolation interp) {
  const int w = img.width();
  const int h = img.height();
  switch (interp) {
    case Interpolation::kNearest:
      return img.at(clamp_index(std::lround(x), w), clamp_index(std::lround(y), h), c);
    case Interpolation::kLinear: {
      const double fx = std::floor(x);
      const double fy = std::floor(y);
      const double tx = x - fx;
      const double ty = y - fy;
      const long x0 = static_cast<long>(fx);
      const long y0 = static_cast<long>(fy);
      auto px = [&](long xx, long yy) {
        return static_cast<double>(img.at(clamp_index(xx, w), clamp_index(yy, h), c));
      };
      const double top = px(x0, y0) * (1.0 - tx) + px(x0 + 1, y0) * tx;
      const double bottom = px(x0, y0 + 1) * (1.0 - tx) + px(x0 + 1, y0 + 1) * tx;
      return top * (1.0 - ty) + bottom * ty;
    }
    case Interpolation::kBicubic: {
      const double fx = std::floor(x);
      const double fy = std::floor(y);
      const long x0 = static_cast<long>(fx);
      const long y0 = static_cast<long>(fy);
      double acc = 0.0;
      for (long j = -1; j <= 2; ++j) {
        const double wy = cubic_kernel(y - (fy + j));
        if (wy == 0.0) continue;
        for (long i = -1; i <= 2; ++i) {
          const double wx = cubic_kernel(x - (fx + i));
          if (wx == 0.0) continue;
          acc += wx * wy * img.at(clamp_index(x0 + i, w), clamp_index(y0 + j, h), c);
        }
      }
      return acc;
    }
  }
  return 0.0;
}

}  // namespace detail

/// Inverse-mapped warp onto a canvas the size of the source. Output pixels
/// whose preimage rounds outside the source are set to 0.
inline Image8 warp(const Image8& img, const AffineMatrix& m, Interpolation interp) {
  if (img.empty()) throw ValidationError("cannot warp an empty image");
  const AffineMatrix inv = inverse(m);
  Image8 out(img.width(), img.height(), img.channels(), 0);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto [sx, sy] = inv.apply(x, y);
      const long ix = std::lround(sx);
      const long iy = std::lround(sy);
      if (ix < 0 || iy < 0 || ix >= img.width() || iy >= img.height()) continue;
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = saturate_u8(detail::sample(img, sx, sy, c, interp));
      }
    }
  }
  return out;
}

/// Pixel-center aligned resampling to a new size.
inline Image8 resize(const Image8& img, int width, int height,
                     Interpolation interp = Interpolation::kLinear) {
  if (img.empty()) throw ValidationError("cannot resize an empty image");
  if (img.width() == width && img.height() == height) return img;
  Image8 out(width, height, img.channels());
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < width; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = saturate_u8(detail::sample(img, src_x, src_y, c, interp));
      }
    }
  }
  return out;
}

enum class FilterKind { kMean3, kLaplacian };

/// 3x3 filter with replicated borders.
inline Image8 spatial_filter(const Image8& img, FilterKind kind) {
  if (img.width() < 3 || img.height() < 3) throw ValidationError("filter needs at least 3x3");
  static constexpr double kMean[9] = {1, 1, 1, 1, 1, 1, 1, 1, 1};
  static constexpr double kLaplace[9] = {0, 1, 0, 1, -4, 1, 0, 1, 0};
  const double* k = kind == FilterKind::kMean3 ? kMean : kLaplace;
  const double norm = kind == FilterKind::kMean3 ? 9.0 : 1.0;
  Image8 out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double kv = k[(dy + 1) * 3 + (dx + 1)];
            if (kv == 0.0) continue;
            acc += kv * img.at(detail::clamp_index(x + dx, img.width()),
                               detail::clamp_index(y + dy, img.height()), c);
          }
        }
        out.at(x, y, c) = saturate_u8(acc / norm);
      }
    }
  }
  return out;
}

using RealMatrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;

namespace detail {

/// W(k, i) = exp(sign * 2 pi i k i / N), with k*i reduced mod N first.
inline ComplexMatrix twiddles(Eigen::Index n, double sign) {
  ComplexMatrix w(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((k * i) % n) / n;
      w(k, i) = std::polar(1.0, angle);
    }
  }
  return w;
}

}  // namespace detail

/// Unnormalized forward transform F(k, l) = sum f(i, j) e^{-i 2 pi (ki + lj) / N},
/// evaluated row-column separably.
inline ComplexMatrix dft2(const RealMatrix& f) {
  if (f.rows() != f.cols() || f.rows() == 0) throw ValidationError("dft2 needs a square N x N input");
  const ComplexMatrix w = detail::twiddles(f.rows(), -1.0);
  return w * f.cast<std::complex<double>>() * w;
}

/// Inverse carrying the 1/N^2 factor; returns the real part.
inline RealMatrix idft2(const ComplexMatrix& spectrum) {
  if (spectrum.rows() != spectrum.cols() || spectrum.rows() == 0) {
    throw ValidationError("idft2 needs a square N x N input");
  }
  const auto n = static_cast<double>(spectrum.rows());
  const ComplexMatrix w = detail::twiddles(spectrum.rows(), 1.0);
  const ComplexMatrix f = w * spectrum * w / (n * n);
  return f.real();
}

/// Grayscale copy of one channel (or of a 1-channel image) as reals.
inline RealMatrix to_real(const Image8& img, int channel = 0) {
  RealMatrix m(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) m(y, x) = img.at(x, y, channel);
  }
  return m;
}

/// Luma (BT.601) for 3-channel input; copy for 1-channel.
inline Image8 to_gray(const Image8& img) {
  if (img.channels() == 1) return img;
  Image8 out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      out.at(x, y) = saturate_u8(0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                                 0.114 * img.at(x, y, 2));
    }
  }
  return out;
}

}  // namespace sensoryeval::imageproc
