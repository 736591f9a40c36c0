#pragma once

// Implementations of the `afm` subcommands. Each command writes its outputs
// into an output directory together with a run manifest; all CSV content is
// a deterministic function of (inputs, options).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "afm/analysis.hpp"
#include "afm/config.hpp"
#include "afm/error.hpp"
#include "afm/modulation.hpp"
#include "afm/simulate.hpp"
#include "afm/spectral.hpp"
#include "afm/trace.hpp"
#include "json.hpp"

namespace afm {

inline constexpr const char* kToolVersion = "1.0.0";

namespace fs = std::filesystem;

/// Options shared by every subcommand.
struct GlobalOptions {
  AFMConfig config;
  std::optional<fs::path> config_path;
  fs::path out_dir = ".";
  std::size_t threads = 1;
  bool quiet = false;
  std::string command_line;
  std::function<void(const std::string&)> log = [](const std::string&) {};
};

/// 64-bit FNV-1a of a file's bytes, as 16 lowercase hex digits.
inline std::string file_fnv1a64(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

inline nlohmann::ordered_json config_json(const AFMConfig& cfg) {
  nlohmann::ordered_json j;
  j["lambda"] = cfg.lambda;
  j["r_c"] = cfg.r_c;
  j["beta"] = cfg.beta;
  j["gamma"] = cfg.gamma;
  j["entropy_gating"] = cfg.entropy_gating;
  j["mask_mode"] = cfg.mask_mode == MaskMode::Hard ? "hard" : "cosine";
  j["ramp_width"] = cfg.ramp_width;
  j["preserve_dc"] = cfg.preserve_dc;
  j["scope"] = scope_string(cfg.scope);
  j["topk"] = cfg.topk;
  j["bins"] = cfg.bins == 0 ? nlohmann::ordered_json("auto") : nlohmann::ordered_json(cfg.bins);
  j["entropy_epsilon"] = cfg.entropy_epsilon;
  j["entropy_pooling"] = cfg.entropy_pooling == EntropyPooling::PerLayer ? "per_layer" : "mean";
  j["map_aggregation"] = cfg.map_aggregation == MapAggregation::Profile ? "profile" : "map";
  return j;
}

namespace detail {

inline std::string num(double v) { return format_double(v); }

inline std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot create " + path.string());
  return out;
}

inline std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return in;
}

inline fs::path resolve(const GlobalOptions& g, const fs::path& p) { return p.is_absolute() ? p : g.out_dir / p; }

class Manifest {
 public:
  Manifest(const GlobalOptions& g, std::string command) : g_(g) {
    json_["tool"] = "afm";
    json_["version"] = kToolVersion;
    json_["command"] = std::move(command);
    json_["command_line"] = g.command_line;
    json_["config"] = config_json(g.config);
    json_["config_file"] = g.config_path ? g.config_path->string() : "";
    json_["inputs"] = nlohmann::ordered_json::array();
    json_["outputs"] = nlohmann::ordered_json::array();
  }

  void input(const fs::path& path) {
    json_["inputs"].push_back({{"path", path.string()}, {"fnv1a64", file_fnv1a64(path)}});
  }
  void output(const fs::path& path) { json_["outputs"].push_back(path.string()); }
  nlohmann::ordered_json& extra() { return json_; }

  fs::path write(const std::string& name) {
    const fs::path path = g_.out_dir / name;
    auto out = open_output(path);
    out << json_.dump(2) << '\n';
    return path;
  }

 private:
  const GlobalOptions& g_;
  nlohmann::ordered_json json_;
};

inline std::string cutoff_label(double rc) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", rc);
  return buf;
}

/// `rho` for a single cutoff, `<prefix>_<rc>` per cutoff when sweeping.
inline std::string series_columns(const std::string& prefix, const std::vector<double>& cutoffs) {
  if (cutoffs.size() == 1) return prefix;
  std::string out;
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    if (i) out += ',';
    out += prefix + "_" + cutoff_label(cutoffs[i]);
  }
  return out;
}

inline double step_u(std::size_t s, std::size_t total) {
  return total >= 2 ? static_cast<double>(s) / static_cast<double>(total - 1) : 0.0;
}

inline void write_hf_csv(const fs::path& path, const TraceAnalysis& a) {
  auto out = open_output(path);
  out << "step,u,tau,block," << series_columns("rho", a.cutoffs) << '\n';
  const std::size_t total = a.header.steps;
  for (std::size_t s = 0; s < total; ++s) {
    for (const auto& ba : a.blocks) {
      const auto& st = ba.steps[s];
      if (!st) continue;
      out << s << ',' << num(step_u(s, total)) << ',' << st->tau << ',' << block_name(ba.block);
      for (double r : st->rho) out << ',' << num(r);
      out << '\n';
    }
  }
}

inline void write_matrix_csv(const fs::path& path, const std::string& value_column,
                             const std::vector<std::optional<std::vector<double>>>& rows) {
  auto out = open_output(path);
  out << "step,bin," << value_column << '\n';
  for (std::size_t s = 0; s < rows.size(); ++s) {
    if (!rows[s]) continue;
    for (std::size_t b = 0; b < rows[s]->size(); ++b) out << s << ',' << b << ',' << num((*rows[s])[b]) << '\n';
  }
}

/// ASCII portable graymap: x = step (early -> late), y = bin with the
/// lowest radius on the bottom row. Values are scaled to 0..255 by `scale`
/// and offset by `offset` (for signed data).
inline void write_pgm(const fs::path& path, const std::vector<std::optional<std::vector<double>>>& rows,
                      std::size_t bins, double scale, double offset) {
  auto out = open_output(path);
  out << "P2\n" << rows.size() << ' ' << bins << "\n255\n";
  for (std::size_t b = bins; b-- > 0;) {
    for (std::size_t s = 0; s < rows.size(); ++s) {
      double v = rows[s] ? (*rows[s])[b] : 0.0;
      long level = std::lround(offset + scale * v);
      level = std::clamp(level, 0L, 255L);
      out << level << (s + 1 == rows.size() ? '\n' : ' ');
    }
  }
}

inline std::vector<std::optional<std::vector<double>>> profile_rows(const BlockAnalysis& ba) {
  std::vector<std::optional<std::vector<double>>> rows(ba.steps.size());
  for (std::size_t s = 0; s < ba.steps.size(); ++s) {
    if (ba.steps[s]) rows[s] = ba.steps[s]->profile.energies;
  }
  return rows;
}

inline void write_energy_heatmap(const fs::path& path, const BlockAnalysis& ba) {
  double peak = 0.0;
  for (const auto& st : ba.steps) {
    if (st) {
      for (double e : st->profile.energies) peak = std::max(peak, e);
    }
  }
  write_pgm(path, profile_rows(ba), ba.bins, peak > 0.0 ? 255.0 / peak : 0.0, 0.0);
}

}  // namespace detail

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  SimSpec spec;
  fs::path output = "fixture.afmt";
};

inline fs::path run_simulate(const SimulateOptions& opts, const GlobalOptions& g) {
  opts.spec.validate();
  const fs::path path = detail::resolve(g, opts.output);
  const AttentionTrace trace = generate_trajectory(opts.spec);
  {
    auto out = detail::open_output(path);
    const auto bytes = write_trace(trace, out);
    g.log("wrote " + path.string() + " (" + std::to_string(trace.records.size()) + " records, " +
          std::to_string(bytes) + " bytes)");
  }
  detail::Manifest manifest(g, "simulate");
  auto& sim = manifest.extra()["simulation"];
  sim["steps"] = opts.spec.steps;
  sim["height"] = opts.spec.height;
  sim["width"] = opts.spec.width;
  sim["tokens"] = opts.spec.tokens;
  sim["seed"] = opts.spec.seed;
  sim["blob_count"] = opts.spec.blob_count;
  sim["sigma0"] = opts.spec.sigma0;
  sim["sigma1"] = opts.spec.sigma1;
  sim["contrast"] = opts.spec.contrast;
  sim["noise_std"] = opts.spec.noise_std;
  std::vector<std::string> blocks;
  for (Block b : sorted_blocks(opts.spec.blocks)) blocks.emplace_back(block_name(b));
  sim["blocks"] = blocks;
  sim["layers_per_block"] = opts.spec.layers_per_block;
  manifest.output(path);
  manifest.extra()["output_fnv1a64"] = file_fnv1a64(path);
  manifest.write("simulate_manifest.json");
  return path;
}

// -------------------------------------------------------------------- edit

struct EditOptions {
  fs::path input;
  fs::path output = "edited.afmt";
  fs::path schedule = "schedule.csv";
};

struct EditResult {
  fs::path trace;
  fs::path schedule;
  std::size_t records = 0;
  std::size_t edited = 0;
};

inline EditResult run_edit(const EditOptions& opts, const GlobalOptions& g) {
  const AFMConfig& cfg = g.config;
  cfg.validate();
  EditResult result{detail::resolve(g, opts.output), detail::resolve(g, opts.schedule)};
  if (fs::exists(result.trace) && fs::exists(opts.input) && fs::equivalent(result.trace, opts.input)) {
    throw Error(Errc::InvalidInput, "edit output would overwrite its input");
  }

  auto in = detail::open_input(opts.input);
  TraceReader reader(in);
  const TraceHeader header = reader.header();
  auto out = detail::open_output(result.trace);
  TraceWriter writer(out, header);
  auto sched = detail::open_output(result.schedule);
  sched << "step,u,tau,block,layer,head,pass,entropy,alpha_lf,alpha_hf\n";

  std::vector<StepRecord> group;
  auto flush = [&] {
    if (group.empty()) return;
    std::vector<ScopedLogits> layers;
    layers.reserve(group.size());
    for (const auto& rec : group) layers.push_back({rec.block, to_logits(rec)});
    const StepEdit edit = apply_afm_step(layers, group.front().step, header.steps, cfg, g.threads);
    std::vector<bool> rewritten(group.size(), false);
    for (const auto& row : edit.schedule) {
      const StepRecord& rec = group[row.index];
      sched << rec.step << ',' << detail::num(row.u) << ',' << rec.tau << ',' << block_name(rec.block) << ','
            << rec.layer << ',' << rec.head << ',' << pass_name(rec.pass) << ',' << detail::num(row.entropy) << ','
            << detail::num(row.gains.alpha_lf) << ',' << detail::num(row.gains.alpha_hf) << '\n';
      rewritten[row.index] = !row.gains.identity();
    }
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (rewritten[i]) {
        writer.write(with_logits(group[i], edit.logits[i]));
        ++result.edited;
      } else {
        writer.write(group[i]);
      }
    }
    result.records += group.size();
    group.clear();
  };

  StepRecord rec;
  while (reader.next(rec)) {
    if (!group.empty() && group.front().step != rec.step) flush();
    group.push_back(rec);
  }
  flush();
  writer.finish();
  out.close();
  sched.close();
  g.log("edited " + std::to_string(result.edited) + " of " + std::to_string(result.records) + " records -> " +
        result.trace.string());

  detail::Manifest manifest(g, "edit");
  manifest.input(opts.input);
  manifest.output(result.trace);
  manifest.output(result.schedule);
  manifest.extra()["output_fnv1a64"] = file_fnv1a64(result.trace);
  manifest.write("edit_manifest.json");
  return result;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeOptions {
  fs::path input;
  AnalysisOptions analysis;
  bool heatmap = false;
  std::string prefix;  // prepended to every output file name
};

struct AnalyzeResult {
  TraceAnalysis analysis;
  fs::path hf_csv;
  std::vector<fs::path> outputs;
};

/// Analysis options with unset fields taken from the config.
inline AnalysisOptions analysis_from_config(const AFMConfig& cfg) {
  AnalysisOptions o;
  o.topk = cfg.topk;
  o.bins = cfg.bins;
  o.cutoffs = {cfg.r_c};
  o.aggregation = cfg.map_aggregation;
  return o;
}

namespace detail {

inline AnalyzeResult analyze_and_write(const fs::path& input, const AnalysisOptions& options, bool heatmap,
                                       const fs::path& dir, const std::string& prefix) {
  AnalyzeResult result;
  {
    auto in = open_input(input);
    result.analysis = analyze_trace(in, options);
  }
  result.hf_csv = dir / (prefix + "hf_series.csv");
  write_hf_csv(result.hf_csv, result.analysis);
  result.outputs.push_back(result.hf_csv);
  for (const auto& ba : result.analysis.blocks) {
    const std::string stem = prefix + "timefreq_" + std::string(block_name(ba.block));
    const fs::path csv = dir / (stem + ".csv");
    write_matrix_csv(csv, "energy", profile_rows(ba));
    result.outputs.push_back(csv);
    if (heatmap) {
      const fs::path pgm = dir / (stem + ".pgm");
      write_energy_heatmap(pgm, ba);
      result.outputs.push_back(pgm);
    }
  }
  return result;
}

}  // namespace detail

inline AnalyzeResult run_analyze(const AnalyzeOptions& opts, const GlobalOptions& g) {
  AnalysisOptions options = opts.analysis;
  options.threads = g.threads;
  AnalyzeResult result = detail::analyze_and_write(opts.input, options, opts.heatmap, g.out_dir, opts.prefix);
  g.log("analyzed " + opts.input.string() + " -> " + result.hf_csv.string());

  detail::Manifest manifest(g, "analyze");
  manifest.input(opts.input);
  manifest.extra()["analysis"] = {{"topk", options.topk},
                                  {"bins", options.bins == 0 ? nlohmann::ordered_json("auto")
                                                             : nlohmann::ordered_json(options.bins)},
                                  {"cutoffs", options.cutoffs}};
  for (const auto& p : result.outputs) manifest.output(p);
  manifest.write(opts.prefix + "analyze_manifest.json");
  return result;
}

// ----------------------------------------------------------------- compare

struct ComparePair {
  fs::path ref;
  fs::path target;
};

struct CompareOptions {
  std::vector<ComparePair> pairs;
  AnalysisOptions analysis;
  double late_threshold = kLateStageThreshold;
  double log_epsilon = kDefaultLogRatioEpsilon;
  bool heatmap = false;
};

struct PairResult {
  fs::path dir;
  fs::path delta_csv;
  fs::path hf_ref_csv;
  fs::path hf_target_csv;
  /// block -> per-cutoff late-stage mean delta
  std::map<Block, std::vector<double>> delta_rho_late;
};

struct CompareResult {
  std::vector<std::size_t> late_steps;
  std::vector<PairResult> pairs;
  /// block -> per-cutoff aggregate over pairs
  std::map<Block, std::vector<PairAggregate>> aggregate;
  fs::path summary;
};

inline CompareResult run_compare(const CompareOptions& opts, const GlobalOptions& g) {
  if (opts.pairs.empty()) throw Error(Errc::InvalidParameter, "compare needs at least one (ref, target) pair");
  AnalysisOptions options = opts.analysis;
  options.threads = g.threads;

  CompareResult result;
  detail::Manifest manifest(g, "compare");
  nlohmann::ordered_json pairs_json = nlohmann::ordered_json::array();
  std::optional<std::size_t> total_steps;
  std::vector<Block> blocks;

  for (std::size_t p = 0; p < opts.pairs.size(); ++p) {
    const auto& pair = opts.pairs[p];
    PairResult pr;
    pr.dir = opts.pairs.size() == 1 ? g.out_dir : g.out_dir / ("pair_" + std::to_string(p));
    auto ref = detail::analyze_and_write(pair.ref, options, false, pr.dir, "ref_");
    auto tgt = detail::analyze_and_write(pair.target, options, false, pr.dir, "target_");
    manifest.input(pair.ref);
    manifest.input(pair.target);
    for (const auto& o : ref.outputs) manifest.output(o);
    for (const auto& o : tgt.outputs) manifest.output(o);
    pr.hf_ref_csv = ref.hf_csv;
    pr.hf_target_csv = tgt.hf_csv;

    const std::size_t steps = ref.analysis.header.steps;
    if (tgt.analysis.header.steps != steps) throw Error(Errc::InvalidInput, "reference and target step counts differ");
    if (total_steps && *total_steps != steps) throw Error(Errc::InvalidInput, "pairs differ in step count");
    total_steps = steps;
    if (result.late_steps.empty()) result.late_steps = late_steps(steps, opts.late_threshold);

    std::vector<Block> pair_blocks;
    for (const auto& ba : ref.analysis.blocks) pair_blocks.push_back(ba.block);
    if (p == 0) blocks = pair_blocks;
    else if (pair_blocks != blocks) throw Error(Errc::InvalidInput, "pairs cover different blocks");

    pr.delta_csv = pr.dir / "delta_rho.csv";
    auto delta_out = detail::open_output(pr.delta_csv);
    delta_out << "step,u,tau,block," << detail::series_columns("delta_rho", options.cutoffs) << '\n';

    std::map<Block, std::vector<std::vector<double>>> deltas;  // block -> cutoff -> series
    for (const auto& rba : ref.analysis.blocks) {
      const BlockAnalysis* tba = tgt.analysis.find(rba.block);
      if (!tba) throw Error(Errc::InvalidInput, std::string("target trace lacks block ") + std::string(block_name(rba.block)));
      auto& per_cut = deltas[rba.block];
      for (std::size_t c = 0; c < options.cutoffs.size(); ++c) {
        per_cut.push_back(delta_rho(tba->hf_series(c, options.cutoffs[c]), rba.hf_series(c, options.cutoffs[c])));
        pr.delta_rho_late[rba.block].push_back(late_stage_mean(per_cut.back(), opts.late_threshold));
      }

      const Grid<double> ratio = log_ratio(tba->time_frequency(), rba.time_frequency(), opts.log_epsilon);
      std::vector<std::optional<std::vector<double>>> rows(ratio.rows());
      double peak = 0.0;
      for (std::size_t s = 0; s < ratio.rows(); ++s) {
        rows[s] = std::vector<double>(ratio.row(s).begin(), ratio.row(s).end());
        for (double v : *rows[s]) peak = std::max(peak, std::abs(v));
      }
      const std::string stem = "log_ratio_" + std::string(block_name(rba.block));
      detail::write_matrix_csv(pr.dir / (stem + ".csv"), "log_ratio", rows);
      manifest.output(pr.dir / (stem + ".csv"));
      if (opts.heatmap) {
        detail::write_pgm(pr.dir / (stem + ".pgm"), rows, ratio.cols(), peak > 0.0 ? 127.0 / peak : 0.0, 128.0);
        manifest.output(pr.dir / (stem + ".pgm"));
      }
    }
    for (std::size_t s = 0; s < steps; ++s) {
      for (const auto& rba : ref.analysis.blocks) {
        delta_out << s << ',' << detail::num(detail::step_u(s, steps)) << ',' << rba.steps[s]->tau << ','
                  << block_name(rba.block);
        for (const auto& series : deltas[rba.block]) delta_out << ',' << detail::num(series[s]);
        delta_out << '\n';
      }
    }
    delta_out.close();
    manifest.output(pr.delta_csv);

    nlohmann::ordered_json pj;
    pj["ref"] = pair.ref.string();
    pj["target"] = pair.target.string();
    for (const auto& [block, late] : pr.delta_rho_late) pj["delta_rho_late"][std::string(block_name(block))] = late;
    pairs_json.push_back(pj);
    result.pairs.push_back(std::move(pr));
  }

  nlohmann::ordered_json summary;
  summary["late_threshold"] = opts.late_threshold;
  summary["late_steps"] = result.late_steps;
  summary["cutoffs"] = options.cutoffs;
  summary["pairs"] = pairs_json;
  for (Block b : blocks) {
    auto& agg_json = summary["aggregate"][std::string(block_name(b))];
    agg_json = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < options.cutoffs.size(); ++c) {
      std::vector<double> per_pair;
      for (const auto& pr : result.pairs) per_pair.push_back(pr.delta_rho_late.at(b)[c]);
      const PairAggregate agg = aggregate_pairs(per_pair);
      result.aggregate[b].push_back(agg);
      agg_json.push_back({{"cutoff", options.cutoffs[c]},
                          {"pairs", agg.pairs},
                          {"mean_delta_rho_late", agg.mean},
                          {"negative_fraction", agg.negative_fraction},
                          {"sign_consistency", agg.sign_consistency}});
    }
  }
  result.summary = g.out_dir / "compare_summary.json";
  {
    auto out = detail::open_output(result.summary);
    out << summary.dump(2) << '\n';
  }
  manifest.output(result.summary);
  manifest.write("compare_manifest.json");
  g.log("compared " + std::to_string(opts.pairs.size()) + " pair(s) -> " + result.summary.string());
  return result;
}

}  // namespace afm
