// afm: simulate, edit, analyze and compare cross-attention logit traces.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "afm/commands.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int exit_code_for(afm::Errc code) {
  switch (code) {
    case afm::Errc::InvalidParameter: return kExitUsage;
    case afm::Errc::NumericalError:
    case afm::Errc::DegenerateSignal: return kExitNumerical;
    default: return kExitData;
  }
}

std::vector<afm::Block> parse_blocks(const std::vector<std::string>& names) {
  std::vector<afm::Block> out;
  for (const auto& n : names) {
    auto b = afm::parse_block(n);
    if (!b) throw afm::Error(afm::Errc::InvalidParameter, "unknown block '" + n + "' (encoder|middle|decoder)");
    out.push_back(*b);
  }
  return out;
}

afm::PassFilter parse_pass_filter(const std::string& name) {
  if (name == "cond") return afm::PassFilter::Cond;
  if (name == "uncond") return afm::PassFilter::Uncond;
  if (name == "merged") return afm::PassFilter::Merged;
  if (name == "any") return afm::PassFilter::Any;
  if (name == "default") return afm::PassFilter::CondOrMerged;
  throw afm::Error(afm::Errc::InvalidParameter, "unknown pass filter '" + name + "'");
}

/// Flags shared by analyze and compare.
struct AnalysisFlags {
  std::size_t topk = 0;
  std::string bins;
  std::vector<double> cutoffs;
  std::vector<std::string> blocks;
  std::string pass = "default";
  std::string aggregate;

  void add(CLI::App* cmd) {
    cmd->add_option("--topk", topk, "top-K aggregation (default: config topk, 8)");
    cmd->add_option("--bins", bins, "radial bins or 'auto' (default: config bins)");
    cmd->add_option("--rc", cutoffs, "HF cutoff; repeat for a sweep (default: config r_c)")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--block", blocks, "restrict to block(s): encoder|middle|decoder");
    cmd->add_option("--pass", pass, "cfg pass filter: default(cond+merged)|cond|uncond|merged|any");
    cmd->add_option("--aggregate", aggregate, "layer/head aggregation: profile|map (default: config)");
  }

  afm::AnalysisOptions resolve(const afm::AFMConfig& cfg) const {
    afm::AnalysisOptions o = afm::analysis_from_config(cfg);
    if (topk) o.topk = topk;
    if (!bins.empty()) {
      afm::AFMConfig tmp;
      afm::set_config_value(tmp, "bins", bins);
      o.bins = tmp.bins;
    }
    if (!cutoffs.empty()) o.cutoffs = cutoffs;
    for (afm::Block b : parse_blocks(blocks)) o.blocks.insert(b);
    o.pass = parse_pass_filter(pass);
    if (aggregate == "profile") o.aggregation = afm::MapAggregation::Profile;
    else if (aggregate == "map") o.aggregation = afm::MapAggregation::Map;
    else if (!aggregate.empty()) throw afm::Error(afm::Errc::InvalidParameter, "unknown aggregation '" + aggregate + "'");
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention frequency analysis and modulation for diffusion cross-attention traces"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(afm::kToolVersion));

  std::string config_path;
  std::string out_dir = ".";
  std::size_t threads = 1;
  bool quiet = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "AFM config file (key = value)");
  app.add_option("--out-dir", out_dir, "directory for outputs and manifests");
  app.add_option("--threads", threads, "worker threads (0 = all cores)");
  app.add_flag("--quiet", quiet, "suppress progress messages");
  app.add_option("--set", overrides, "override a config key, e.g. --set lambda=0");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic coarse-to-fine trace");
  afm::SimulateOptions sim;
  int hw = 0;
  std::vector<std::string> sim_blocks;
  std::string sim_output = sim.output.string();
  sim_cmd->add_option("--steps", sim.spec.steps, "sampler steps S");
  sim_cmd->add_option("--hw", hw, "square grid side (sets height and width)");
  sim_cmd->add_option("--height", sim.spec.height, "grid height");
  sim_cmd->add_option("--width", sim.spec.width, "grid width");
  sim_cmd->add_option("--tokens", sim.spec.tokens, "tokens T");
  sim_cmd->add_option("--seed", sim.spec.seed, "random seed");
  sim_cmd->add_option("--blobs", sim.spec.blob_count, "Gaussian bumps per token");
  sim_cmd->add_option("--sigma0", sim.spec.sigma0, "initial bump width (pixels)");
  sim_cmd->add_option("--sigma1", sim.spec.sigma1, "final bump width (pixels)");
  sim_cmd->add_option("--contrast", sim.spec.contrast, "logit amplitude scale");
  sim_cmd->add_option("--noise", sim.spec.noise_std, "additive noise std");
  sim_cmd->add_option("--blocks", sim_blocks, "blocks to emit (default encoder)");
  sim_cmd->add_option("--layers", sim.spec.layers_per_block, "layers per block");
  sim_cmd->add_option("-o,--output", sim_output, "output trace");

  // edit
  auto* edit_cmd = app.add_subcommand("edit", "apply AFM to every step of a recorded trace");
  afm::EditOptions edit;
  std::string edit_input, edit_output = edit.output.string(), edit_schedule = edit.schedule.string();
  edit_cmd->add_option("trace", edit_input, "input trace")->required();
  edit_cmd->add_option("-o,--output", edit_output, "edited trace");
  edit_cmd->add_option("--schedule", edit_schedule, "per-layer schedule CSV");

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "HF-ratio series and time-frequency matrices");
  std::string analyze_input;
  bool analyze_heatmap = false;
  AnalysisFlags analyze_flags;
  analyze_cmd->add_option("trace", analyze_input, "input trace")->required();
  analyze_cmd->add_flag("--heatmap", analyze_heatmap, "also write PGM heatmaps");
  analyze_flags.add(analyze_cmd);

  // compare
  auto* compare_cmd = app.add_subcommand("compare", "delta-rho, log-ratio and late-stage summaries");
  std::vector<std::string> refs, targets;
  double late = afm::kLateStageThreshold;
  bool compare_heatmap = false;
  AnalysisFlags compare_flags;
  compare_cmd->add_option("--ref", refs, "reference trace (repeat for multiple pairs)")->required();
  compare_cmd->add_option("--target", targets, "target trace (one per --ref)")->required();
  compare_cmd->add_option("--late", late, "late-stage progress threshold")->check(CLI::Range(0.0, 1.0));
  compare_cmd->add_flag("--heatmap", compare_heatmap, "also write log-ratio PGM heatmaps");
  compare_flags.add(compare_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  afm::GlobalOptions g;
  g.out_dir = out_dir;
  g.threads = threads;
  g.quiet = quiet;
  for (int i = 0; i < argc; ++i) g.command_line += (i ? " " : "") + std::string(argv[i]);
  if (!quiet) g.log = [](const std::string& msg) { std::cerr << "afm: " << msg << '\n'; };

  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw afm::Error(afm::Errc::Io, "cannot open config " + config_path);
      g.config = afm::parse_config(in);
      g.config_path = config_path;
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw afm::Error(afm::Errc::InvalidParameter, "--set expects key=value");
      afm::set_config_value(g.config, afm::detail::trim(kv.substr(0, eq)), afm::detail::trim(kv.substr(eq + 1)));
    }
    g.config.validate();
    std::filesystem::create_directories(g.out_dir);

    if (*sim_cmd) {
      if (hw) sim.spec.height = sim.spec.width = hw;
      if (!sim_blocks.empty()) sim.spec.blocks = parse_blocks(sim_blocks);
      sim.output = sim_output;
      afm::run_simulate(sim, g);
    } else if (*edit_cmd) {
      edit.input = edit_input;
      edit.output = edit_output;
      edit.schedule = edit_schedule;
      afm::run_edit(edit, g);
    } else if (*analyze_cmd) {
      afm::AnalyzeOptions opts;
      opts.input = analyze_input;
      opts.analysis = analyze_flags.resolve(g.config);
      opts.heatmap = analyze_heatmap;
      afm::run_analyze(opts, g);
    } else if (*compare_cmd) {
      if (refs.size() != targets.size()) {
        throw afm::Error(afm::Errc::InvalidParameter, "compare needs one --target per --ref");
      }
      afm::CompareOptions opts;
      for (std::size_t i = 0; i < refs.size(); ++i) opts.pairs.push_back({refs[i], targets[i]});
      opts.analysis = compare_flags.resolve(g.config);
      opts.late_threshold = late;
      opts.heatmap = compare_heatmap;
      afm::run_compare(opts, g);
    }
  } catch (const afm::Error& e) {
    std::cerr << "afm: error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "afm: error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "afm: error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
