#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "afm/modulation.hpp"
#include "expect_error.hpp"
#include "oracles.hpp"

using afm::AFMConfig;
using afm::BandGains;
using afm::Errc;
using afm::LogitTensor;

namespace {

LogitTensor random_logits(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t t, double scale = 3.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  std::vector<double> v(h * w * t);
  for (double& x : v) x = d(rng);
  return LogitTensor(h, w, t, std::move(v));
}

/// Single-token tensor from a spatial function.
template <typename Fn>
LogitTensor spatial(std::size_t h, std::size_t w, Fn&& fn) {
  std::vector<double> v(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) v[y * w + x] = fn(y, x);
  }
  return LogitTensor(h, w, 1, std::move(v));
}

double power_at(const LogitTensor& l, std::size_t ky, std::size_t kx) {
  afm::Grid<double> g(l.height(), l.width());
  for (std::size_t q = 0; q < l.queries(); ++q) g.flat()[q] = l(q, 0);
  return std::norm(afm::fft2(g)(ky, kx));
}

double max_abs_diff(const LogitTensor& a, const LogitTensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) d = std::max(d, std::abs(a.values().flat()[i] - b.values().flat()[i]));
  return d;
}

AFMConfig hard_config(double r_c = 0.25) {
  AFMConfig c;
  c.r_c = r_c;
  return c;
}

}  // namespace

TEST(Mask, PartitionOfUnity) {
  AFMConfig cfg;
  for (auto mode : {afm::MaskMode::Hard, afm::MaskMode::Cosine}) {
    cfg.mask_mode = mode;
    const auto m = afm::build_mask(12, 10, cfg);
    for (std::size_t i = 0; i < m.lf.size(); ++i) {
      EXPECT_GE(m.lf.flat()[i], 0.0);
      EXPECT_LE(m.lf.flat()[i], 1.0);
      EXPECT_DOUBLE_EQ(m.lf.flat()[i] + m.hf.flat()[i], 1.0);
    }
  }
}

TEST(Mask, HardMaskMatchesRadiusRule) {
  const auto m = afm::build_mask(8, 8, hard_config());
  const auto r = oracle::radius_unshifted(8, 8);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(m.lf.flat()[i], r[i] <= 0.25 + oracle::kEdgeSlack ? 1.0 : 0.0);
  EXPECT_EQ(m.lf(0, 0), 1.0);
  EXPECT_EQ(m.hf(4, 4), 1.0);
}

TEST(Mask, ConjugateSymmetric) {
  AFMConfig cfg;
  cfg.mask_mode = afm::MaskMode::Cosine;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {7, 10}, {16, 5}}) {
    const auto m = afm::build_mask(h, w, cfg);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) EXPECT_DOUBLE_EQ(m.lf(y, x), m.lf((h - y) % h, (w - x) % w));
    }
  }
}

TEST(Mask, CosineConvergesToHard) {
  AFMConfig cos_cfg;
  cos_cfg.mask_mode = afm::MaskMode::Cosine;
  cos_cfg.ramp_width = 1e-9;
  const auto soft = afm::build_mask(32, 32, cos_cfg);
  const auto hard = afm::build_mask(32, 32, hard_config());
  const auto r = oracle::radius_unshifted(32, 32);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (std::abs(r[i] - 0.25) < 1e-6) continue;
    EXPECT_LT(std::abs(soft.lf.flat()[i] - hard.lf.flat()[i]), 1e-6);
  }
}

TEST(Mask, CosineRampShape) {
  using afm::MaskMode;
  EXPECT_DOUBLE_EQ(afm::lowpass_weight(0.1, MaskMode::Cosine, 0.25, 0.05), 1.0);
  EXPECT_DOUBLE_EQ(afm::lowpass_weight(0.25, MaskMode::Cosine, 0.25, 0.05), 0.5);
  EXPECT_DOUBLE_EQ(afm::lowpass_weight(0.4, MaskMode::Cosine, 0.25, 0.05), 0.0);
  EXPECT_GT(afm::lowpass_weight(0.22, MaskMode::Cosine, 0.25, 0.05), afm::lowpass_weight(0.28, MaskMode::Cosine, 0.25, 0.05));
}

TEST(Gains, CurveEndpoints) {
  EXPECT_EQ(afm::curve_gains(0.0, 0.2), (BandGains{1.2, 1.0}));
  EXPECT_EQ(afm::curve_gains(1.0, 0.2), (BandGains{1.0, 1.2}));
  EXPECT_EQ(afm::curve_gains(0.5, 0.0), (BandGains{1.0, 1.0}));
  EXPECT_TRUE(afm::curve_gains(0.37, 0.0).identity());
  expect_errc(Errc::InvalidParameter, [] { afm::curve_gains(1.5, 0.2); });
}

TEST(Gains, GatedValues) {
  const auto g = afm::gated_gains(0.0, 0.2, 20.0, 4.0, 1.0);
  EXPECT_NEAR(g.alpha_lf, 5.2, 1e-12);
  EXPECT_DOUBLE_EQ(g.alpha_hf, 1.0);
  const auto late = afm::gated_gains(1.0, 0.2, 20.0, 4.0, 0.0);
  EXPECT_DOUBLE_EQ(late.alpha_lf, 1.0);
  EXPECT_NEAR(late.alpha_hf, 2.0, 1e-12);
  EXPECT_EQ(afm::gated_gains(0.0, 0.2, 20.0, 4.0, 1.0 + 1e-9), g);
  EXPECT_TRUE(afm::gated_gains(0.3, 0.0, 20.0, 4.0, 0.6).identity());
}

TEST(Edit, IdentityGainsReturnInput) {
  std::mt19937_64 rng(31);
  const auto l = random_logits(rng, 8, 8, 5);
  const auto m = afm::build_mask(8, 8, hard_config());
  EXPECT_EQ(afm::edit_logits(l, m, {1.0, 1.0}, true), l);
  EXPECT_EQ(afm::edit_logits(l, m, {1.0, 1.0}, false), l);
}

TEST(Edit, SpectralPathWithIdentityGainsIsNearIdentity) {
  std::mt19937_64 rng(32);
  const auto l = random_logits(rng, 6, 10, 4);
  const auto m = afm::build_mask(6, 10, hard_config());
  EXPECT_LT(max_abs_diff(afm::detail::edit_logits_spectral(l, m, {1.0, 1.0}, true, nullptr), l), 1e-9);
}

TEST(Edit, ConstantColumnKeepsDc) {
  const auto l = spatial(8, 8, [](auto, auto) { return 2.5; });
  const auto m = afm::build_mask(8, 8, hard_config());
  const auto e = afm::edit_logits(l, m, {1.7, 0.4}, true);
  EXPECT_LT(max_abs_diff(e, l), 1e-12);
  const auto scaled = afm::edit_logits(l, m, {1.7, 0.4}, false);
  for (double v : scaled.values().flat()) EXPECT_NEAR(v, 2.5 * 1.7, 1e-12);
}

TEST(Edit, CheckerboardScalesByHfGain) {
  const auto l = spatial(8, 8, [](std::size_t y, std::size_t x) { return (x + y) % 2 ? -1.0 : 1.0; });
  const auto m = afm::build_mask(8, 8, hard_config());
  const double a = 1.3;
  const auto e = afm::edit_logits(l, m, {1.0, a}, true);
  for (std::size_t i = 0; i < l.values().size(); ++i) EXPECT_NEAR(e.values().flat()[i], a * l.values().flat()[i], 1e-12);
  EXPECT_NEAR(power_at(e, 4, 4) / power_at(l, 4, 4), a * a, 1e-12);
}

TEST(Edit, LowFrequencyWaveScalesByLfGain) {
  const auto l = spatial(8, 8, [](auto, std::size_t x) { return std::cos(2.0 * std::numbers::pi * static_cast<double>(x) / 8.0); });
  const auto m = afm::build_mask(8, 8, hard_config());
  const double a = 0.6;
  const auto e = afm::edit_logits(l, m, {a, 1.9}, true);
  EXPECT_NEAR(power_at(e, 0, 1) / power_at(l, 0, 1), a * a, 1e-12);
  EXPECT_NEAR(power_at(e, 0, 7) / power_at(l, 0, 7), a * a, 1e-12);
}

TEST(Edit, AsymmetricMaskIsRejected) {
  std::mt19937_64 rng(33);
  const auto l = random_logits(rng, 8, 8, 3);
  auto m = afm::build_mask(8, 8, hard_config());
  m.lf.flat()[1] = 0.0;
  m.hf.flat()[1] = 1.0;  // (0, 1) loses its partner (0, 7)
  expect_errc(Errc::NumericalError, [&] { afm::edit_logits(l, m, {2.0, 1.0}, true); });
}

TEST(Edit, DimensionMismatchIsRejected) {
  std::mt19937_64 rng(34);
  const auto l = random_logits(rng, 8, 8, 3);
  const auto m = afm::build_mask(8, 6, hard_config());
  expect_errc(Errc::InvalidParameter, [&] { afm::edit_logits(l, m, {1.2, 1.0}, true); });
}

TEST(Edit, OutputStaysRealAndKeepsMean) {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> gain(0.0, 3.0);
  std::uniform_real_distribution<double> cut(0.05, 0.95);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 2 + trial % 9, w = 2 + (trial * 5) % 11;
    AFMConfig cfg;
    cfg.r_c = cut(rng);
    cfg.mask_mode = trial % 2 ? afm::MaskMode::Cosine : afm::MaskMode::Hard;
    const auto l = random_logits(rng, h, w, 3);
    afm::EditReport report;
    const auto e = afm::edit_logits(l, afm::build_mask(h, w, cfg), {gain(rng), gain(rng)}, true, &report);
    EXPECT_LT(report.max_imag_residue, 1e-10);
    for (std::size_t j = 0; j < 3; ++j) {
      double before = 0.0, after = 0.0;
      for (std::size_t q = 0; q < l.queries(); ++q) {
        before += l(q, j);
        after += e(q, j);
      }
      EXPECT_NEAR(after, before, 1e-9);
    }
  }
}

TEST(Edit, PerQueryShiftDoesNotChangeAttention) {
  // Adding the same spatial map to every token column changes each query's
  // logits by a constant, which softmax ignores.
  std::mt19937_64 rng(36);
  const auto l = random_logits(rng, 8, 8, 6);
  std::uniform_real_distribution<double> d(-4.0, 4.0);
  std::vector<double> shifted(l.values().data());
  for (std::size_t q = 0; q < l.queries(); ++q) {
    const double b = d(rng);
    for (std::size_t j = 0; j < l.tokens(); ++j) shifted[q * l.tokens() + j] += b;
  }
  const auto m = afm::build_mask(8, 8, hard_config());
  const auto a = afm::softmax_rows(afm::edit_logits(l, m, {1.3, 0.8}, true));
  const auto b = afm::softmax_rows(afm::edit_logits(LogitTensor(8, 8, 6, shifted), m, {1.3, 0.8}, true));
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values.flat()[i], b.values.flat()[i], 1e-10);
}

TEST(Edit, TokensAreEditedIndependently) {
  std::mt19937_64 rng(37);
  const auto l = random_logits(rng, 6, 6, 4);
  const auto m = afm::build_mask(6, 6, hard_config());
  const auto full = afm::edit_logits(l, m, {1.4, 0.7}, true);
  for (std::size_t j = 0; j < 4; ++j) {
    std::vector<double> col(36);
    for (std::size_t q = 0; q < 36; ++q) col[q] = l(q, j);
    const auto single = afm::edit_logits(LogitTensor(6, 6, 1, col), m, {1.4, 0.7}, true);
    for (std::size_t q = 0; q < 36; ++q) EXPECT_NEAR(full(q, j), single(q, 0), 1e-12);
  }
}

TEST(Edit, MatchesDirectDftReference) {
  std::mt19937_64 rng(38);
  std::uniform_real_distribution<double> gain(0.5, 2.0);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {6, 9}, {16, 16}, {5, 4}}) {
    for (bool dc : {true, false}) {
      const auto l = random_logits(rng, h, w, 3);
      const double a_lf = gain(rng), a_hf = gain(rng);
      const auto e = afm::edit_logits(l, afm::build_mask(h, w, hard_config()), {a_lf, a_hf}, dc);
      const auto ref = oracle::naive_edit(l.values().data(), h, w, 3, 0.25, a_lf, a_hf, dc);
      EXPECT_LT(oracle::rel_error(e.values().data(), ref), 1e-10) << h << "x" << w;
    }
  }
}

namespace {

std::vector<afm::ScopedLogits> three_blocks(std::mt19937_64& rng) {
  return {{afm::Block::Encoder, random_logits(rng, 8, 8, 6)},
          {afm::Block::Encoder, random_logits(rng, 16, 16, 6)},
          {afm::Block::Middle, random_logits(rng, 4, 4, 6)},
          {afm::Block::Decoder, random_logits(rng, 8, 8, 6)}};
}

}  // namespace

TEST(Step, ZeroStrengthIsExactNoOp) {
  std::mt19937_64 rng(41);
  const auto layers = three_blocks(rng);
  for (bool gating : {false, true}) {
    AFMConfig cfg;
    cfg.lambda = 0.0;
    cfg.entropy_gating = gating;
    cfg.scope = {afm::Block::Encoder, afm::Block::Middle, afm::Block::Decoder};
    for (int s : {0, 17, 49}) {
      const auto out = afm::apply_afm_step(layers, s, 50, cfg);
      for (std::size_t i = 0; i < layers.size(); ++i) EXPECT_EQ(out.logits[i], layers[i].logits);
    }
  }
}

TEST(Step, OutOfScopeLayersUntouched) {
  std::mt19937_64 rng(42);
  const auto layers = three_blocks(rng);
  AFMConfig cfg;
  cfg.entropy_gating = true;
  const auto out = afm::apply_afm_step(layers, 3, 50, cfg);
  EXPECT_NE(out.logits[0], layers[0].logits);
  EXPECT_NE(out.logits[1], layers[1].logits);
  EXPECT_EQ(out.logits[2], layers[2].logits);
  EXPECT_EQ(out.logits[3], layers[3].logits);
  ASSERT_EQ(out.schedule.size(), 2u);
  EXPECT_EQ(out.schedule[0].index, 0u);
  EXPECT_EQ(out.schedule[1].index, 1u);
}

TEST(Step, ScheduleUsesUnmodifiedEntropy) {
  std::mt19937_64 rng(43);
  const auto layers = three_blocks(rng);
  AFMConfig cfg;
  cfg.entropy_gating = true;
  const auto out = afm::apply_afm_step(layers, 10, 50, cfg);
  for (const auto& rec : out.schedule) {
    const double h = afm::mean_token_entropy(afm::softmax_rows(layers[rec.index].logits));
    EXPECT_DOUBLE_EQ(rec.entropy, h);
    EXPECT_DOUBLE_EQ(rec.u, 10.0 / 49.0);
    EXPECT_EQ(rec.gains, afm::gated_gains(rec.u, 0.2, 20.0, 4.0, h));
  }
  cfg.entropy_pooling = afm::EntropyPooling::Mean;
  const auto pooled = afm::apply_afm_step(layers, 10, 50, cfg);
  EXPECT_DOUBLE_EQ(pooled.schedule[0].entropy, pooled.schedule[1].entropy);
  EXPECT_NEAR(pooled.schedule[0].entropy, 0.5 * (out.schedule[0].entropy + out.schedule[1].entropy), 1e-15);
}

TEST(Step, MatchesDirectReferencePerLayer) {
  std::mt19937_64 rng(44);
  const auto layers = three_blocks(rng);
  AFMConfig cfg;
  cfg.scope = {afm::Block::Encoder, afm::Block::Decoder};
  const auto out = afm::apply_afm_step(layers, 5, 50, cfg);
  for (const auto& rec : out.schedule) {
    const auto& l = layers[rec.index].logits;
    const auto ref = oracle::naive_edit(l.values().data(), l.height(), l.width(), l.tokens(), cfg.r_c, rec.gains.alpha_lf,
                                        rec.gains.alpha_hf, true);
    EXPECT_LT(oracle::rel_error(out.logits[rec.index].values().data(), ref), 1e-5);
  }
}

TEST(Step, ThreadCountDoesNotChangeOutput) {
  std::mt19937_64 rng(45);
  const auto layers = three_blocks(rng);
  AFMConfig cfg;
  cfg.entropy_gating = true;
  cfg.scope = {afm::Block::Encoder, afm::Block::Middle, afm::Block::Decoder};
  const auto one = afm::apply_afm_step(layers, 30, 50, cfg, 1);
  const auto four = afm::apply_afm_step(layers, 30, 50, cfg, 4);
  EXPECT_EQ(one.logits, four.logits);
  ASSERT_EQ(one.schedule.size(), four.schedule.size());
  for (std::size_t i = 0; i < one.schedule.size(); ++i) EXPECT_EQ(one.schedule[i].gains, four.schedule[i].gains);
}

TEST(Step, RejectsBadParameters) {
  std::mt19937_64 rng(46);
  const auto layers = three_blocks(rng);
  AFMConfig cfg;
  expect_errc(Errc::InvalidParameter, [&] { afm::apply_afm_step(layers, 50, 50, cfg); });
  cfg.lambda = -0.1;
  expect_errc(Errc::InvalidParameter, [&] { afm::apply_afm_step(layers, 0, 50, cfg); });
}
