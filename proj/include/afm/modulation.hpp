#pragma once

// Attention Frequency Modulation: token-wise, pre-softmax reweighting of the
// low/high radial frequency bands of each token's logit map.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "afm/attention.hpp"
#include "afm/block.hpp"
#include "afm/config.hpp"
#include "afm/error.hpp"
#include "afm/fft.hpp"
#include "afm/parallel.hpp"
#include "afm/spectral.hpp"

namespace afm {

/// LF/HF partition on the unshifted DFT layout of an H x W grid.
struct BandMask {
  Grid<double> lf;
  Grid<double> hf;
  MaskMode mode = MaskMode::Hard;
  double ramp_width = 0.0;
  double cutoff = 0.25;

  std::size_t height() const noexcept { return lf.rows(); }
  std::size_t width() const noexcept { return lf.cols(); }
};

struct BandGains {
  double alpha_lf = 1.0;
  double alpha_hf = 1.0;

  bool identity() const noexcept { return alpha_lf == 1.0 && alpha_hf == 1.0; }
  friend bool operator==(const BandGains&, const BandGains&) = default;
};

/// Low-pass weight at normalized radius r. Hard: 1[r <= r_c]. Cosine: 1 below
/// r_c - w, 0 above r_c + w, raised-cosine in between.
inline double lowpass_weight(double r, MaskMode mode, double r_c, double ramp_width) {
  if (mode == MaskMode::Hard || ramp_width <= 0.0) return r <= r_c + kRadiusSlack ? 1.0 : 0.0;
  const double lo = r_c - ramp_width;
  const double hi = r_c + ramp_width;
  if (r <= lo) return 1.0;
  if (r >= hi) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (r - lo) / (hi - lo)));
}

inline BandMask build_mask(std::size_t height, std::size_t width, const AFMConfig& config) {
  if (height < 2 || width < 2) throw Error(Errc::InvalidParameter, "band mask needs H, W >= 2");
  check_cutoff(config.r_c);
  const Grid<double> radius = normalized_radius(height, width, false);
  BandMask mask{Grid<double>(height, width), Grid<double>(height, width), config.mask_mode,
                config.mask_mode == MaskMode::Cosine ? config.ramp_width : 0.0, config.r_c};
  for (std::size_t i = 0; i < radius.size(); ++i) {
    const double lf = lowpass_weight(radius.flat()[i], mask.mode, config.r_c, mask.ramp_width);
    mask.lf.flat()[i] = lf;
    mask.hf.flat()[i] = 1.0 - lf;
  }
  return mask;
}

inline void check_progress(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw Error(Errc::InvalidParameter, "progress u must lie in [0, 1]");
}

/// alpha_LF = 1 + lambda (1 - u), alpha_HF = 1 + lambda u.
inline BandGains curve_gains(double u, double lambda) {
  check_progress(u);
  return {1.0 + lambda * (1.0 - u), 1.0 + lambda * u};
}

/// Entropy-gated schedule. Entropy slightly above 1 (from the epsilon guard)
/// is clamped. Gains are not clipped; alpha_LF reaches 1 + lambda (1 + beta)
/// at u = 0 with fully diffuse attention.
inline BandGains gated_gains(double u, double lambda, double beta, double gamma, double entropy) {
  check_progress(u);
  if (!std::isfinite(entropy)) throw Error(Errc::InvalidParameter, "entropy must be finite");
  const double h = std::clamp(entropy, 0.0, 1.0);
  return {1.0 + lambda * (1.0 - u) * (1.0 + beta * h), 1.0 + lambda * u * (1.0 + gamma * (1.0 - h))};
}

struct EditReport {
  /// Largest |imag| after the inverse FFT, relative to the largest |value|
  /// of the corresponding input map.
  double max_imag_residue = 0.0;
};

inline constexpr double kImagResidueLimit = 1e-4;

namespace detail {

inline LogitTensor edit_logits_spectral(const LogitTensor& logits, const BandMask& mask, const BandGains& gains,
                                        bool preserve_dc, EditReport* report) {
  const std::size_t h = logits.height();
  const std::size_t w = logits.width();
  const std::size_t tokens = logits.tokens();
  Fft2d plan(h, w);
  Grid<double> gain(h, w);
  for (std::size_t i = 0; i < gain.size(); ++i) {
    gain.flat()[i] = gains.alpha_lf * mask.lf.flat()[i] + gains.alpha_hf * mask.hf.flat()[i];
  }
  std::vector<double> out(h * w * tokens);
  ComplexGrid map(h, w);
  double worst = 0.0;
  for (std::size_t j = 0; j < tokens; ++j) {
    double peak = 0.0;
    for (std::size_t q = 0; q < h * w; ++q) {
      map.flat()[q] = logits(q, j);
      peak = std::max(peak, std::abs(logits(q, j)));
    }
    plan.forward(map);
    const Complex dc = map.flat()[0];
    for (std::size_t i = 0; i < map.size(); ++i) map.flat()[i] *= gain.flat()[i];
    if (preserve_dc) map.flat()[0] = dc;
    plan.inverse(map);
    double residue = 0.0;
    for (std::size_t q = 0; q < h * w; ++q) {
      out[q * tokens + j] = map.flat()[q].real();
      residue = std::max(residue, std::abs(map.flat()[q].imag()));
    }
    if (peak > 0.0) worst = std::max(worst, residue / peak);
  }
  if (report) report->max_imag_residue = worst;
  if (worst > kImagResidueLimit) {
    throw Error(Errc::NumericalError, "inverse FFT left an imaginary residue of " + std::to_string(worst) +
                                          " (relative); the band mask is not conjugate-symmetric");
  }
  return LogitTensor(h, w, tokens, std::move(out));
}

}  // namespace detail

/// For every token column: reshape to H x W, FFT, scale by
/// alpha_LF * lf + alpha_HF * hf, optionally restore DC, inverse FFT, keep the
/// real part. Identity gains return the input unchanged.
inline LogitTensor edit_logits(const LogitTensor& logits, const BandMask& mask, const BandGains& gains,
                               bool preserve_dc, EditReport* report = nullptr) {
  if (mask.height() != logits.height() || mask.width() != logits.width()) {
    throw Error(Errc::InvalidParameter, "band mask dimensions differ from the logit grid");
  }
  if (gains.identity()) {
    if (report) report->max_imag_residue = 0.0;
    return logits;
  }
  return detail::edit_logits_spectral(logits, mask, gains, preserve_dc, report);
}

/// One cross-attention record of a step as seen by the editor.
struct ScopedLogits {
  Block block = Block::Encoder;
  LogitTensor logits;
};

struct ScheduleRecord {
  std::size_t index = 0;  // position of the edited layer within the step
  double u = 0.0;
  double entropy = 0.0;
  BandGains gains;
};

struct StepEdit {
  std::vector<LogitTensor> logits;  // same order as the input layers
  std::vector<ScheduleRecord> schedule;
};

/// Gains for one layer at progress u given its (unmodified) entropy.
inline BandGains schedule_gains(double u, double entropy, const AFMConfig& config) {
  return config.entropy_gating ? gated_gains(u, config.lambda, config.beta, config.gamma, entropy)
                               : curve_gains(u, config.lambda);
}

/// Full per-step loop: progress, entropy from softmax of the unmodified
/// logits, gains, then token-wise edits of every in-scope layer.
/// Out-of-scope layers are returned as exact copies. Layers may be processed
/// on several threads; results do not depend on the thread count.
inline StepEdit apply_afm_step(std::span<const ScopedLogits> layers, int step, int total, const AFMConfig& config,
                               std::size_t threads = 1) {
  config.validate();
  const ProgressIndex p = progress(step, total);

  std::vector<std::size_t> edited;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!config.in_scope(layers[i].block)) continue;
    if (config.entropy_gating && layers[i].logits.tokens() < 2) {
      throw Error(Errc::InvalidParameter, "entropy gating needs T >= 2");
    }
    edited.push_back(i);
  }

  std::vector<double> entropy(edited.size(), 0.0);
  parallel_for(edited.size(), threads, [&](std::size_t k) {
    const auto& logits = layers[edited[k]].logits;
    entropy[k] = logits.tokens() >= 2 ? mean_token_entropy(softmax_rows(logits), config.entropy_epsilon) : 0.0;
  });
  if (config.entropy_pooling == EntropyPooling::Mean && !edited.empty()) {
    double mean = 0.0;
    for (double e : entropy) mean += e;
    mean /= static_cast<double>(entropy.size());
    std::fill(entropy.begin(), entropy.end(), mean);
  }

  StepEdit out;
  out.logits.reserve(layers.size());
  for (const auto& layer : layers) out.logits.push_back(layer.logits);

  std::map<std::pair<std::size_t, std::size_t>, BandMask> masks;
  for (std::size_t k = 0; k < edited.size(); ++k) {
    const auto& logits = layers[edited[k]].logits;
    const BandGains gains = schedule_gains(p.u, entropy[k], config);
    out.schedule.push_back({edited[k], p.u, entropy[k], gains});
    const auto key = std::make_pair(logits.height(), logits.width());
    if (!gains.identity() && !masks.contains(key)) masks.emplace(key, build_mask(key.first, key.second, config));
  }
  parallel_for(edited.size(), threads, [&](std::size_t k) {
    const BandGains& gains = out.schedule[k].gains;
    if (gains.identity()) return;
    const auto& logits = layers[edited[k]].logits;
    out.logits[edited[k]] = edit_logits(logits, masks.at({logits.height(), logits.width()}), gains, config.preserve_dc);
  });
  return out;
}

}  // namespace afm
