#pragma once

// Token-softmax attention signals derived from pre-softmax cross-attention
// logits: row softmax, top-K concentration maps, mean normalized token
// entropy, and the normalized denoising progress index.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "afm/error.hpp"
#include "afm/grid.hpp"

namespace afm {

/// Pre-softmax logits for one (step, layer, head): HW query rows by T token
/// columns. Query rows are the spatial grid flattened row-major (i = y*W + x).
class LogitTensor {
 public:
  LogitTensor() = default;

  LogitTensor(std::size_t height, std::size_t width, std::size_t tokens, std::vector<double> values)
      : height_(height), width_(width), values_(height * width, tokens, std::move(values)) {
    if (height == 0 || width == 0 || tokens == 0) {
      throw Error(Errc::InvalidInput, "logit tensor dimensions must be positive");
    }
    if (values_.data().size() != height * width * tokens) {
      throw Error(Errc::InvalidInput, "logit tensor holds " + std::to_string(values_.data().size()) +
                                          " values, expected " + std::to_string(height * width * tokens));
    }
    for (double v : values_.flat()) {
      if (!std::isfinite(v)) throw Error(Errc::InvalidInput, "logit tensor contains a non-finite value");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t tokens() const noexcept { return values_.cols(); }
  std::size_t queries() const noexcept { return values_.rows(); }

  const Grid<double>& values() const noexcept { return values_; }
  double operator()(std::size_t query, std::size_t token) const { return values_(query, token); }

  friend bool operator==(const LogitTensor&, const LogitTensor&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  Grid<double> values_;
};

/// Row-stochastic token distribution per query, same shape as its logits.
struct AttentionWeights {
  std::size_t height = 0;
  std::size_t width = 0;
  Grid<double> values;

  std::size_t tokens() const noexcept { return values.cols(); }
  std::size_t queries() const noexcept { return values.rows(); }
};

/// H x W token-agnostic map: mean of the K largest token probabilities.
struct ConcentrationMap {
  Grid<double> values;
  std::size_t k = 1;

  std::size_t height() const noexcept { return values.rows(); }
  std::size_t width() const noexcept { return values.cols(); }
};

struct ProgressIndex {
  int step = 0;
  int total = 2;
  double u = 0.0;
};

inline constexpr double kDefaultEntropyEpsilon = 1e-10;

/// Row-wise softmax over tokens with per-row max subtraction.
inline AttentionWeights softmax_rows(const LogitTensor& logits) {
  const std::size_t rows = logits.queries();
  const std::size_t cols = logits.tokens();
  AttentionWeights out{logits.height(), logits.width(), Grid<double>(rows, cols)};
  for (std::size_t i = 0; i < rows; ++i) {
    auto in = logits.values().row(i);
    auto dst = out.values.row(i);
    const double peak = *std::max_element(in.begin(), in.end());
    if (!std::isfinite(peak)) throw Error(Errc::InvalidInput, "non-finite logit row");
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      dst[j] = std::exp(in[j] - peak);
      total += dst[j];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

/// Mean of the K largest entries per row, reshaped to H x W. Ties do not
/// affect the result since equal values contribute equally to the mean.
inline ConcentrationMap topk_map(const AttentionWeights& weights, std::size_t k) {
  const std::size_t tokens = weights.tokens();
  if (k < 1 || k > tokens) {
    throw Error(Errc::InvalidParameter,
                "top-K requires 1 <= K <= T (K=" + std::to_string(k) + ", T=" + std::to_string(tokens) + ")");
  }
  ConcentrationMap map{Grid<double>(weights.height, weights.width), k};
  std::vector<double> scratch(tokens);
  for (std::size_t i = 0; i < weights.queries(); ++i) {
    auto row = weights.values.row(i);
    std::copy(row.begin(), row.end(), scratch.begin());
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end(),
                      std::greater<>());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += scratch[j];
    map.values.flat()[i] = sum / static_cast<double>(k);
  }
  return map;
}

/// Mean over queries of -sum_j A log(A + eps), divided by log T.
inline double mean_token_entropy(const AttentionWeights& weights, double epsilon = kDefaultEntropyEpsilon) {
  const std::size_t tokens = weights.tokens();
  if (tokens < 2) throw Error(Errc::InvalidParameter, "token entropy needs T >= 2 (log T normalizer is zero)");
  if (!(epsilon > 0.0)) throw Error(Errc::InvalidParameter, "entropy epsilon must be positive");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.queries(); ++i) {
    double h = 0.0;
    for (double a : weights.values.row(i)) h -= a * std::log(a + epsilon);
    total += h;
  }
  return total / (static_cast<double>(weights.queries()) * std::log(static_cast<double>(tokens)));
}

inline ProgressIndex progress(int step, int total) {
  if (total < 2) throw Error(Errc::InvalidParameter, "progress needs S >= 2");
  if (step < 0 || step > total - 1) {
    throw Error(Errc::InvalidParameter,
                "step " + std::to_string(step) + " outside [0, " + std::to_string(total - 1) + "]");
  }
  return {step, total, static_cast<double>(step) / static_cast<double>(total - 1)};
}

}  // namespace afm
