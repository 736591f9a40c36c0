#pragma once

// Synthetic cross-attention logit trajectories with a controllable
// coarse-to-fine spectral fingerprint.
//
// Each token's logit map at step s is a sum of Gaussian bumps at fixed
// token-specific centers whose width shrinks from sigma0 to sigma1 as the
// progress u(s) goes 0 -> 1, plus additive Gaussian noise. Random draws come
// from a counter-based source keyed by (seed, block, layer, step, token),
// so every record can be generated independently and in any order.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string>
#include <vector>

#include "afm/attention.hpp"
#include "afm/block.hpp"
#include "afm/error.hpp"
#include "afm/trace.hpp"

namespace afm {

struct SimSpec {
  int steps = 50;
  int height = 16;
  int width = 16;
  int tokens = 16;
  std::uint64_t seed = 2025;
  int blob_count = 3;
  double sigma0 = 5.0;
  double sigma1 = 1.0;
  double contrast = 6.0;
  double noise_std = 0.05;
  std::vector<Block> blocks{Block::Encoder};
  int layers_per_block = 1;

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(Errc::InvalidParameter, msg); };
    if (steps < 2 || steps > 0xFFFF) fail("steps must lie in [2, 65535]");
    if (height < 2 || width < 2 || height > 0xFFFF || width > 0xFFFF) fail("grid dimensions must lie in [2, 65535]");
    if (tokens < 1 || tokens > 0xFFFF) fail("tokens must lie in [1, 65535]");
    if (blob_count < 1) fail("blob_count must be >= 1");
    if (!(sigma1 > 0.0)) fail("sigma1 must be > 0");
    if (!(sigma0 >= sigma1)) fail("sigma0 must be >= sigma1 (sigma0 == sigma1 gives a stationary fixture)");
    if (!std::isfinite(contrast) || !(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      fail("contrast must be finite and noise_std >= 0");
    }
    if (blocks.empty()) fail("at least one block is required");
    if (layers_per_block < 1) fail("layers_per_block must be >= 1");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based stream: the state is a hash of the key, advanced by a
/// Weyl increment.
class KeyedRandom {
 public:
  KeyedRandom(std::uint64_t seed, std::initializer_list<std::uint64_t> key) : state_(splitmix64(seed)) {
    for (std::uint64_t k : key) state_ = splitmix64(state_ ^ splitmix64(k + 0x632BE59BD9B4E019ull));
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

enum class Stream : std::uint64_t { Centers = 1, Noise = 2 };

}  // namespace detail

/// Blob width at progress u, interpolated geometrically between sigma0 and sigma1.
inline double sim_sigma(const SimSpec& spec, double u) {
  return spec.sigma0 * std::pow(spec.sigma1 / spec.sigma0, u);
}

/// DDIM-style decreasing scheduler timestep for annotation (1000 train steps).
inline std::int32_t sim_timestep(int step, int steps) {
  const int ratio = 1000 / steps;
  return static_cast<std::int32_t>((steps - 1 - step) * ratio + 1);
}

/// Logits of one (block, layer) at one step.
inline LogitTensor sim_logits(const SimSpec& spec, Block block, int layer, int step) {
  const double u = progress(step, spec.steps).u;
  const double sigma = sim_sigma(spec, u);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  const auto h = static_cast<std::size_t>(spec.height);
  const auto w = static_cast<std::size_t>(spec.width);
  const auto t = static_cast<std::size_t>(spec.tokens);
  std::vector<double> values(h * w * t, 0.0);
  for (std::size_t j = 0; j < t; ++j) {
    detail::KeyedRandom centers(spec.seed, {static_cast<std::uint64_t>(detail::Stream::Centers),
                                            static_cast<std::uint64_t>(block), static_cast<std::uint64_t>(layer), j});
    for (int b = 0; b < spec.blob_count; ++b) {
      const double cy = centers.uniform() * static_cast<double>(h);
      const double cx = centers.uniform() * static_cast<double>(w);
      const double amp = spec.contrast * (0.5 + 0.5 * centers.uniform());
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double dx = static_cast<double>(x) + 0.5 - cx;
          values[(y * w + x) * t + j] += amp * std::exp(-(dy * dy + dx * dx) * inv_two_var);
        }
      }
    }
    if (spec.noise_std > 0.0) {
      detail::KeyedRandom noise(spec.seed, {static_cast<std::uint64_t>(detail::Stream::Noise),
                                            static_cast<std::uint64_t>(block), static_cast<std::uint64_t>(layer),
                                            static_cast<std::uint64_t>(step), j});
      for (std::size_t q = 0; q < h * w; ++q) values[q * t + j] += spec.noise_std * noise.normal();
    }
  }
  return LogitTensor(h, w, t, std::move(values));
}

/// Unique blocks in enum order.
inline std::vector<Block> sorted_blocks(const std::vector<Block>& blocks) {
  std::vector<Block> out;
  for (Block b : {Block::Encoder, Block::Middle, Block::Decoder}) {
    for (Block x : blocks) {
      if (x == b) {
        out.push_back(b);
        break;
      }
    }
  }
  return out;
}

inline TraceHeader sim_header(const SimSpec& spec) {
  TraceHeader header;
  header.steps = static_cast<std::uint16_t>(spec.steps);
  header.model = "afm-sim/gaussian-blobs";
  header.sampler = "ddim-like S=" + std::to_string(spec.steps);
  header.flags = kFlagPassLabels;
  header.record_count =
      static_cast<std::uint32_t>(spec.steps * spec.layers_per_block * static_cast<int>(sorted_blocks(spec.blocks).size()));
  return header;
}

/// Record for one (step, block, layer), head-averaged, conditional pass.
inline StepRecord sim_record(const SimSpec& spec, int step, Block block, int layer) {
  StepRecord meta;
  meta.step = static_cast<std::uint16_t>(step);
  meta.tau = sim_timestep(step, spec.steps);
  meta.block = block;
  meta.layer = static_cast<std::uint16_t>(layer);
  meta.head = kHeadAveraged;
  meta.pass = Pass::Cond;
  meta.height = static_cast<std::uint16_t>(spec.height);
  meta.width = static_cast<std::uint16_t>(spec.width);
  meta.tokens = static_cast<std::uint16_t>(spec.tokens);
  return with_logits(meta, sim_logits(spec, block, layer, step));
}

/// Whole trace, records in canonical (step, block, layer) order.
inline AttentionTrace generate_trajectory(const SimSpec& spec) {
  spec.validate();
  AttentionTrace trace{sim_header(spec), {}};
  const auto blocks = sorted_blocks(spec.blocks);
  trace.records.reserve(trace.header.record_count);
  for (int s = 0; s < spec.steps; ++s) {
    for (Block b : blocks) {
      for (int l = 0; l < spec.layers_per_block; ++l) trace.records.push_back(sim_record(spec, s, b, l));
    }
  }
  return trace;
}

}  // namespace afm
