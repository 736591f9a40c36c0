#pragma once

// Forward/inverse 2D DFT on small real or complex grids.
//
// Convention: the forward transform is unscaled, the inverse carries 1/(HW).
// Power-of-two lengths use an iterative radix-2 transform; any other length
// falls back to a direct DFT over an exact twiddle table (O(n^2) per line,
// adequate for latent-grid sizes).

#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "afm/error.hpp"
#include "afm/grid.hpp"

namespace afm {

using Complex = std::complex<double>;
using ComplexGrid = Grid<Complex>;

class Fft1d {
 public:
  explicit Fft1d(std::size_t n) : n_(n), pow2_(n != 0 && (n & (n - 1)) == 0), twiddle_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = {std::cos(angle), std::sin(angle)};
    }
    if (pow2_) {
      bitrev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
        bitrev_[i] = r;
      }
    } else {
      scratch_.resize(n);
    }
  }

  std::size_t size() const noexcept { return n_; }

  /// In-place unscaled transform; inverse uses conjugate twiddles.
  void transform(std::span<Complex> data, bool inverse) {
    if (pow2_) {
      radix2(data, inverse);
    } else {
      direct(data, inverse);
    }
  }

 private:
  Complex w(std::size_t k, bool inverse) const { return inverse ? std::conj(twiddle_[k]) : twiddle_[k]; }

  void radix2(std::span<Complex> data, bool inverse) {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const Complex t = w(j * stride, inverse) * data[start + j + half];
          const Complex a = data[start + j];
          data[start + j] = a + t;
          data[start + j + half] = a - t;
        }
      }
    }
  }

  void direct(std::span<Complex> data, bool inverse) {
    for (std::size_t k = 0; k < n_; ++k) {
      Complex acc{0.0, 0.0};
      for (std::size_t j = 0; j < n_; ++j) acc += data[j] * w((j * k) % n_, inverse);
      scratch_[k] = acc;
    }
    std::copy(scratch_.begin(), scratch_.end(), data.begin());
  }

  std::size_t n_;
  bool pow2_;
  std::vector<Complex> twiddle_;
  std::vector<std::size_t> bitrev_;
  std::vector<Complex> scratch_;
};

/// Reusable separable 2D plan for a fixed (rows, cols). Not thread-safe;
/// use one plan per worker.
class Fft2d {
 public:
  Fft2d(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_plan_(cols), col_plan_(rows), column_(rows) {
    if (rows < 2 || cols < 2) throw Error(Errc::InvalidParameter, "2D FFT needs H, W >= 2");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  void forward(ComplexGrid& grid) { run(grid, false); }

  void inverse(ComplexGrid& grid) {
    run(grid, true);
    const double scale = 1.0 / static_cast<double>(rows_ * cols_);
    for (Complex& v : grid.flat()) v *= scale;
  }

 private:
  void run(ComplexGrid& grid, bool inverse) {
    if (grid.rows() != rows_ || grid.cols() != cols_) throw Error(Errc::InvalidParameter, "FFT plan/grid shape mismatch");
    for (std::size_t r = 0; r < rows_; ++r) row_plan_.transform(grid.row(r), inverse);
    for (std::size_t c = 0; c < cols_; ++c) {
      for (std::size_t r = 0; r < rows_; ++r) column_[r] = grid(r, c);
      col_plan_.transform(column_, inverse);
      for (std::size_t r = 0; r < rows_; ++r) grid(r, c) = column_[r];
    }
  }

  std::size_t rows_;
  std::size_t cols_;
  Fft1d row_plan_;
  Fft1d col_plan_;
  std::vector<Complex> column_;
};

inline ComplexGrid to_complex(const Grid<double>& real) {
  ComplexGrid out(real.rows(), real.cols());
  for (std::size_t i = 0; i < real.size(); ++i) out.flat()[i] = real.flat()[i];
  return out;
}

/// Unscaled forward 2D DFT of a real grid.
inline ComplexGrid fft2(const Grid<double>& real) {
  Fft2d plan(real.rows(), real.cols());
  ComplexGrid out = to_complex(real);
  plan.forward(out);
  return out;
}

/// Inverse 2D DFT with 1/(HW) scaling.
inline ComplexGrid ifft2(ComplexGrid spectrum) {
  Fft2d plan(spectrum.rows(), spectrum.cols());
  plan.inverse(spectrum);
  return spectrum;
}

/// Signed frequency in cycles/sample for DFT index k of length n
/// (same ordering as numpy.fft.fftfreq).
inline double fft_frequency(std::size_t k, std::size_t n) {
  const auto ki = static_cast<long long>(k);
  const auto ni = static_cast<long long>(n);
  const long long signed_k = (2 * ki < ni) ? ki : ki - ni;
  return static_cast<double>(signed_k) / static_cast<double>(n);
}

/// Circular shift putting the DC bin at (rows/2, cols/2).
template <typename T>
Grid<T> fftshift(const Grid<T>& in) {
  Grid<T> out(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    for (std::size_t c = 0; c < in.cols(); ++c) {
      out((r + in.rows() / 2) % in.rows(), (c + in.cols() / 2) % in.cols()) = in(r, c);
    }
  }
  return out;
}

}  // namespace afm
