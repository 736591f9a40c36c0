#pragma once

// Normalized 2D power spectra of concentration maps, radial binning, and the
// coarse-to-fine diagnostics built on them (HF ratio, deltas, log-ratios,
// late-stage means).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "afm/attention.hpp"
#include "afm/error.hpp"
#include "afm/fft.hpp"
#include "afm/grid.hpp"

namespace afm {

/// |F|^2 normalized to unit sum, FFT-shifted (DC at (H/2, W/2)).
struct PowerSpectrum {
  Grid<double> values;
};

struct RadialProfile {
  std::vector<double> energies;

  std::size_t bins() const noexcept { return energies.size(); }
};

/// Slack for comparisons of computed radii against exact boundaries (bin
/// edges, cutoffs): a coordinate whose true radius sits on a boundary may be
/// computed a few ulps off, and is treated as lying on it.
inline constexpr double kRadiusSlack = 1e-9;

/// Normalized radius r in [0, 1] for every coordinate of an H x W DFT grid.
/// With shifted=true the layout matches PowerSpectrum; otherwise it matches
/// the raw fft2 output. r_max is the largest radius present on the grid, so
/// even dimensions give r_max = sqrt(0.5^2 + 0.5^2) cycles/pixel.
inline Grid<double> normalized_radius(std::size_t height, std::size_t width, bool shifted) {
  double max_fy = 0.0;
  double max_fx = 0.0;
  for (std::size_t k = 0; k < height; ++k) max_fy = std::max(max_fy, std::abs(fft_frequency(k, height)));
  for (std::size_t k = 0; k < width; ++k) max_fx = std::max(max_fx, std::abs(fft_frequency(k, width)));
  const double r_max = std::hypot(max_fy, max_fx);
  Grid<double> out(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t ky = shifted ? (r + height - height / 2) % height : r;
      const std::size_t kx = shifted ? (c + width - width / 2) % width : c;
      const double radius = r_max > 0.0 ? std::hypot(fft_frequency(ky, height), fft_frequency(kx, width)) / r_max : 0.0;
      out(r, c) = std::min(radius, 1.0);
    }
  }
  return out;
}

/// Largest representable radius in cycles/pixel for an H x W grid.
inline double max_radius_cycles(std::size_t height, std::size_t width) {
  double max_fy = 0.0;
  double max_fx = 0.0;
  for (std::size_t k = 0; k < height; ++k) max_fy = std::max(max_fy, std::abs(fft_frequency(k, height)));
  for (std::size_t k = 0; k < width; ++k) max_fx = std::max(max_fx, std::abs(fft_frequency(k, width)));
  return std::hypot(max_fy, max_fx);
}

/// Assignment of shifted frequency coordinates to B radial bins using
/// bin = min(floor(r * B), B - 1). The representative radius of bin b is its
/// lower edge b / B, so bin 0 (which always holds DC) sits at r_b = 0.
struct RadialBinning {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bins = 0;
  Grid<double> radius;
  Grid<std::size_t> bin_of;
  std::vector<double> bin_radius;
  std::vector<std::size_t> bin_count;
};

inline RadialBinning make_binning(std::size_t height, std::size_t width, std::size_t bins) {
  if (bins < 2) throw Error(Errc::InvalidParameter, "radial binning needs B >= 2");
  if (height < 1 || width < 1) throw Error(Errc::InvalidParameter, "radial binning needs a non-empty grid");
  RadialBinning out;
  out.height = height;
  out.width = width;
  out.bins = bins;
  out.radius = normalized_radius(height, width, true);
  out.bin_of = Grid<std::size_t>(height, width);
  out.bin_count.assign(bins, 0);
  for (std::size_t i = 0; i < out.radius.size(); ++i) {
    const double scaled = out.radius.flat()[i] * static_cast<double>(bins) + kRadiusSlack;
    const auto b = std::min(static_cast<std::size_t>(std::floor(scaled)), bins - 1);
    out.bin_of.flat()[i] = b;
    ++out.bin_count[b];
  }
  out.bin_radius.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) out.bin_radius[b] = static_cast<double>(b) / static_cast<double>(bins);
  return out;
}

/// 16 bins for grids of at least 16 x 16, otherwise min(H, W) / 2 (at least 2).
inline std::size_t default_bins(std::size_t height, std::size_t width) {
  const std::size_t side = std::min(height, width);
  if (side >= 16) return 16;
  return std::max<std::size_t>(2, side / 2);
}

inline PowerSpectrum normalized_power(const ComplexGrid& spectrum) {
  Grid<double> power(spectrum.rows(), spectrum.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    power.flat()[i] = std::norm(spectrum.flat()[i]);
    total += power.flat()[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw Error(Errc::DegenerateSignal, "spectrum has zero (or non-finite) total power");
  }
  for (double& v : power.flat()) v /= total;
  return {fftshift(power)};
}

inline RadialProfile radial_profile(const PowerSpectrum& power, const RadialBinning& binning) {
  if (power.values.rows() != binning.height || power.values.cols() != binning.width) {
    throw Error(Errc::InvalidParameter, "power spectrum and binning dimensions differ");
  }
  RadialProfile out{std::vector<double>(binning.bins, 0.0)};
  for (std::size_t i = 0; i < power.values.size(); ++i) out.energies[binning.bin_of.flat()[i]] += power.values.flat()[i];
  return out;
}

/// Concentration map -> radial energy profile.
inline RadialProfile map_profile(const Grid<double>& map, const RadialBinning& binning) {
  return radial_profile(normalized_power(fft2(map)), binning);
}

inline void check_cutoff(double r_c) {
  if (!(r_c > 0.0 && r_c < 1.0)) throw Error(Errc::InvalidParameter, "cutoff r_c must lie in (0, 1)");
}

/// Fraction of profile energy in bins with representative radius >= r_c.
inline double hf_ratio(const RadialProfile& profile, const RadialBinning& binning, double r_c) {
  check_cutoff(r_c);
  if (profile.bins() != binning.bins) throw Error(Errc::InvalidParameter, "profile and binning bin counts differ");
  double rho = 0.0;
  for (std::size_t b = 0; b < profile.bins(); ++b) {
    if (binning.bin_radius[b] >= r_c - kRadiusSlack) rho += profile.energies[b];
  }
  return std::clamp(rho, 0.0, 1.0);
}

/// Per-step stack of radial profiles; row s is step s (early -> late).
struct TimeFrequencyMatrix {
  Grid<double> values;

  std::size_t steps() const noexcept { return values.rows(); }
  std::size_t bins() const noexcept { return values.cols(); }
};

inline TimeFrequencyMatrix stack_profiles(std::span<const RadialProfile> profiles) {
  if (profiles.empty()) return {};
  const std::size_t bins = profiles.front().bins();
  TimeFrequencyMatrix out{Grid<double>(profiles.size(), bins)};
  for (std::size_t s = 0; s < profiles.size(); ++s) {
    if (profiles[s].bins() != bins) throw Error(Errc::InvalidParameter, "profiles differ in bin count");
    std::copy(profiles[s].energies.begin(), profiles[s].energies.end(), out.values.row(s).begin());
  }
  return out;
}

struct HFSeries {
  std::vector<double> rho;
  double cutoff = 0.25;
};

inline std::vector<double> delta_rho(const HFSeries& target, const HFSeries& ref) {
  if (target.rho.size() != ref.rho.size()) throw Error(Errc::InvalidParameter, "HF series lengths differ");
  if (target.cutoff != ref.cutoff) throw Error(Errc::InvalidParameter, "HF series cutoffs differ");
  std::vector<double> out(ref.rho.size());
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = target.rho[s] - ref.rho[s];
  return out;
}

inline constexpr double kDefaultLogRatioEpsilon = 1e-12;

/// R(s, b) = log((target + eps) / (ref + eps)).
inline Grid<double> log_ratio(const TimeFrequencyMatrix& target, const TimeFrequencyMatrix& ref,
                              double epsilon = kDefaultLogRatioEpsilon) {
  if (target.steps() != ref.steps() || target.bins() != ref.bins()) {
    throw Error(Errc::InvalidParameter, "time-frequency matrices differ in shape");
  }
  if (!(epsilon > 0.0)) throw Error(Errc::InvalidParameter, "log-ratio epsilon must be positive");
  Grid<double> out(ref.steps(), ref.bins());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.flat()[i] = std::log((target.values.flat()[i] + epsilon) / (ref.values.flat()[i] + epsilon));
  }
  return out;
}

inline constexpr double kLateStageThreshold = 0.8;

/// Steps s in [0, S) with s / (S - 1) >= threshold.
inline std::vector<std::size_t> late_steps(std::size_t total_steps, double threshold = kLateStageThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(Errc::InvalidParameter, "late-stage threshold must lie in (0, 1)");
  if (total_steps < 2) throw Error(Errc::InvalidParameter, "late-stage selection needs S >= 2");
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < total_steps; ++s) {
    if (static_cast<double>(s) / static_cast<double>(total_steps - 1) >= threshold) out.push_back(s);
  }
  return out;
}

inline double late_stage_mean(std::span<const double> series, double threshold = kLateStageThreshold) {
  const auto steps = late_steps(series.size(), threshold);
  if (steps.empty()) throw Error(Errc::InvalidParameter, "late-stage selection is empty");
  double sum = 0.0;
  for (std::size_t s : steps) sum += series[s];
  return sum / static_cast<double>(steps.size());
}

}  // namespace afm
