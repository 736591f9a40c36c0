#pragma once

// Trace-level spectral analysis: for every (step, block) the records that
// pass the filters are turned into top-K concentration maps, radially binned,
// averaged, and summarized by HF ratios at one or more cutoffs.

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "afm/attention.hpp"
#include "afm/block.hpp"
#include "afm/config.hpp"
#include "afm/error.hpp"
#include "afm/parallel.hpp"
#include "afm/spectral.hpp"
#include "afm/trace.hpp"

namespace afm {

enum class PassFilter { CondOrMerged, Cond, Uncond, Merged, Any };

inline bool pass_matches(PassFilter filter, Pass pass) {
  switch (filter) {
    case PassFilter::CondOrMerged: return pass == Pass::Cond || pass == Pass::Merged;
    case PassFilter::Cond: return pass == Pass::Cond;
    case PassFilter::Uncond: return pass == Pass::Uncond;
    case PassFilter::Merged: return pass == Pass::Merged;
    case PassFilter::Any: return true;
  }
  return false;
}

struct AnalysisOptions {
  std::size_t topk = 8;
  std::size_t bins = 0;  // 0: default_bins of the smallest grid in the block
  std::vector<double> cutoffs{0.25};
  std::set<Block> blocks;  // empty: every block present
  PassFilter pass = PassFilter::CondOrMerged;
  MapAggregation aggregation = MapAggregation::Profile;
  std::size_t threads = 1;
};

/// Summary of one block at one step.
struct StepStats {
  std::size_t step = 0;
  std::int32_t tau = -1;
  std::size_t records = 0;
  RadialProfile profile;
  std::vector<double> rho;  // one per cutoff
};

struct BlockAnalysis {
  Block block = Block::Encoder;
  std::size_t bins = 0;
  std::vector<std::optional<StepStats>> steps;  // indexed by step

  bool complete() const {
    return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return s.has_value(); });
  }

  /// HF series at cutoff index c; every step must be present.
  HFSeries hf_series(std::size_t c, double cutoff) const {
    HFSeries out{{}, cutoff};
    for (std::size_t s = 0; s < steps.size(); ++s) {
      if (!steps[s]) {
        throw Error(Errc::InvalidInput,
                    std::string(block_name(block)) + " has no records at step " + std::to_string(s));
      }
      out.rho.push_back(steps[s]->rho.at(c));
    }
    return out;
  }

  TimeFrequencyMatrix time_frequency() const {
    std::vector<RadialProfile> profiles;
    for (std::size_t s = 0; s < steps.size(); ++s) {
      if (!steps[s]) {
        throw Error(Errc::InvalidInput,
                    std::string(block_name(block)) + " has no records at step " + std::to_string(s));
      }
      profiles.push_back(steps[s]->profile);
    }
    return stack_profiles(profiles);
  }
};

struct TraceAnalysis {
  TraceHeader header;
  std::vector<double> cutoffs;
  std::vector<BlockAnalysis> blocks;  // enum order

  const BlockAnalysis* find(Block b) const {
    for (const auto& ba : blocks) {
      if (ba.block == b) return &ba;
    }
    return nullptr;
  }
};

/// Top-K concentration map of one record's logits.
inline ConcentrationMap record_concentration(const StepRecord& rec, std::size_t topk) {
  return topk_map(softmax_rows(to_logits(rec)), topk);
}

namespace detail {

struct BinningCache {
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, RadialBinning> cache;

  const RadialBinning& get(std::size_t h, std::size_t w, std::size_t bins) {
    const auto key = std::make_tuple(h, w, bins);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, make_binning(h, w, bins)).first;
    return it->second;
  }
};

}  // namespace detail

/// Streams a trace one step at a time; memory is bounded by one step's records.
inline TraceAnalysis analyze_trace(std::istream& in, const AnalysisOptions& options) {
  if (options.cutoffs.empty()) throw Error(Errc::InvalidParameter, "at least one cutoff is required");
  for (double rc : options.cutoffs) check_cutoff(rc);
  if (options.bins == 1) throw Error(Errc::InvalidParameter, "bins must be >= 2");

  TraceReader reader(in);
  TraceAnalysis result;
  result.header = reader.header();
  result.cutoffs = options.cutoffs;
  const std::size_t total_steps = result.header.steps;

  std::map<Block, BlockAnalysis> blocks;
  detail::BinningCache binnings;

  auto process_step = [&](std::vector<StepRecord>& group) {
    if (group.empty()) return;
    std::map<Block, std::vector<const StepRecord*>> by_block;
    for (const auto& rec : group) by_block[rec.block].push_back(&rec);

    for (auto& [block, recs] : by_block) {
      auto [it, inserted] = blocks.try_emplace(block);
      BlockAnalysis& ba = it->second;
      if (inserted) {
        ba.block = block;
        ba.steps.resize(total_steps);
        std::size_t min_h = SIZE_MAX, min_w = SIZE_MAX;
        for (const auto* r : recs) {
          min_h = std::min<std::size_t>(min_h, r->height);
          min_w = std::min<std::size_t>(min_w, r->width);
        }
        ba.bins = options.bins ? options.bins : default_bins(min_h, min_w);
      }
      for (const auto* r : recs) {
        if (r->height < 2 || r->width < 2) throw Error(Errc::InvalidParameter, "spectral analysis needs H, W >= 2");
        binnings.get(r->height, r->width, ba.bins);
      }

      StepStats stats;
      stats.step = recs.front()->step;
      stats.tau = recs.front()->tau;
      stats.records = recs.size();
      stats.profile.energies.assign(ba.bins, 0.0);

      if (options.aggregation == MapAggregation::Profile) {
        std::vector<RadialProfile> profiles(recs.size());
        parallel_for(recs.size(), options.threads, [&](std::size_t i) {
          const auto& rec = *recs[i];
          const RadialBinning& binning = binnings.cache.at(std::make_tuple(rec.height, rec.width, ba.bins));
          profiles[i] = map_profile(record_concentration(rec, options.topk).values, binning);
        });
        for (const auto& p : profiles) {
          for (std::size_t b = 0; b < ba.bins; ++b) stats.profile.energies[b] += p.energies[b];
        }
        for (double& e : stats.profile.energies) e /= static_cast<double>(profiles.size());
      } else {
        const std::size_t h = recs.front()->height;
        const std::size_t w = recs.front()->width;
        for (const auto* r : recs) {
          if (r->height != h || r->width != w) {
            throw Error(Errc::InvalidParameter, "map aggregation needs equal grid sizes within a block");
          }
        }
        std::vector<ConcentrationMap> maps(recs.size());
        parallel_for(recs.size(), options.threads,
                     [&](std::size_t i) { maps[i] = record_concentration(*recs[i], options.topk); });
        Grid<double> mean(h, w, 0.0);
        for (const auto& m : maps) {
          for (std::size_t i = 0; i < mean.size(); ++i) mean.flat()[i] += m.values.flat()[i];
        }
        for (double& v : mean.flat()) v /= static_cast<double>(maps.size());
        stats.profile = map_profile(mean, binnings.cache.at(std::make_tuple(h, w, ba.bins)));
      }

      const RadialBinning& rep = binnings.cache.at(std::make_tuple(recs.front()->height, recs.front()->width, ba.bins));
      for (double rc : options.cutoffs) stats.rho.push_back(hf_ratio(stats.profile, rep, rc));
      ba.steps.at(stats.step) = std::move(stats);
    }
    group.clear();
  };

  std::vector<StepRecord> group;
  StepRecord rec;
  while (reader.next(rec)) {
    if (!pass_matches(options.pass, rec.pass)) continue;
    if (!options.blocks.empty() && !options.blocks.contains(rec.block)) continue;
    if (!group.empty() && group.front().step != rec.step) process_step(group);
    group.push_back(rec);
  }
  process_step(group);

  for (auto& [block, ba] : blocks) result.blocks.push_back(std::move(ba));
  return result;
}

/// Mean, fraction negative, and sign consistency of per-pair late deltas.
struct PairAggregate {
  std::size_t pairs = 0;
  double mean = 0.0;
  double negative_fraction = 0.0;
  double sign_consistency = 0.0;
};

inline PairAggregate aggregate_pairs(const std::vector<double>& deltas) {
  PairAggregate out;
  out.pairs = deltas.size();
  if (deltas.empty()) return out;
  std::size_t neg = 0, pos = 0;
  for (double d : deltas) {
    out.mean += d;
    if (d < 0.0) ++neg;
    if (d > 0.0) ++pos;
  }
  out.mean /= static_cast<double>(deltas.size());
  out.negative_fraction = static_cast<double>(neg) / static_cast<double>(deltas.size());
  // Fraction of pairs sharing the sign of the mean; a zero mean counts zeros.
  std::size_t agree = 0;
  for (double d : deltas) {
    if ((out.mean < 0.0 && d < 0.0) || (out.mean > 0.0 && d > 0.0) || (out.mean == 0.0 && d == 0.0)) ++agree;
  }
  out.sign_consistency = static_cast<double>(agree) / static_cast<double>(deltas.size());
  return out;
}

}  // namespace afm
