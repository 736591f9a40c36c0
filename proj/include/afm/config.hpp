#pragma once

// AFM configuration and its `key = value` text form, shared with the host
// exporter. Unknown keys and malformed values are rejected.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "afm/block.hpp"
#include "afm/error.hpp"

namespace afm {

enum class MaskMode { Hard, Cosine };

/// Whether gating entropy comes from each edited layer or the mean over
/// all in-scope layers of the step.
enum class EntropyPooling { PerLayer, Mean };

/// Multi-layer/head aggregation for analysis: average radial profiles
/// (statistic level) or average concentration maps before the FFT.
enum class MapAggregation { Profile, Map };

struct AFMConfig {
  double lambda = 0.2;
  double r_c = 0.25;
  double beta = 20.0;
  double gamma = 4.0;
  bool entropy_gating = false;
  MaskMode mask_mode = MaskMode::Hard;
  double ramp_width = 0.05;
  bool preserve_dc = true;
  std::set<Block> scope{Block::Encoder};
  std::size_t topk = 8;
  std::size_t bins = 0;  // 0 selects default_bins(H, W)
  double entropy_epsilon = 1e-10;
  EntropyPooling entropy_pooling = EntropyPooling::PerLayer;
  MapAggregation map_aggregation = MapAggregation::Profile;

  bool in_scope(Block b) const { return scope.contains(b); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(Errc::InvalidParameter, msg); };
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
    if (!(r_c > 0.0 && r_c < 1.0)) fail("r_c must lie in (0, 1)");
    if (!std::isfinite(beta) || !std::isfinite(gamma)) fail("beta and gamma must be finite");
    if (!(ramp_width >= 0.0) || !std::isfinite(ramp_width)) fail("ramp_width must be finite and >= 0");
    if (topk < 1) fail("topk must be >= 1");
    if (bins == 1) fail("bins must be >= 2 (or auto)");
    if (!(entropy_epsilon > 0.0)) fail("entropy_epsilon must be positive");
  }

  friend bool operator==(const AFMConfig&, const AFMConfig&) = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size() || !std::isfinite(out)) {
    throw Error(Errc::InvalidInput, "config key '" + key + "': not a finite number: '" + value + "'");
  }
  return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
    throw Error(Errc::InvalidInput, "config key '" + key + "': not a non-negative integer: '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw Error(Errc::InvalidInput, "config key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::set<Block> parse_scope(const std::string& value) {
  std::set<Block> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    auto b = parse_block(item);
    if (!b) throw Error(Errc::InvalidInput, "config key 'scope': unknown block '" + item + "'");
    out.insert(*b);
  }
  if (out.empty()) throw Error(Errc::InvalidInput, "config key 'scope' is empty");
  return out;
}

}  // namespace detail

inline std::string scope_string(const std::set<Block>& scope) {
  std::string out;
  for (Block b : scope) {
    if (!out.empty()) out += ',';
    out += block_name(b);
  }
  return out;
}

/// Apply one key/value pair to a config.
inline void set_config_value(AFMConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "lambda") cfg.lambda = parse_double(key, value);
  else if (key == "r_c") cfg.r_c = parse_double(key, value);
  else if (key == "beta") cfg.beta = parse_double(key, value);
  else if (key == "gamma") cfg.gamma = parse_double(key, value);
  else if (key == "entropy_gating") cfg.entropy_gating = parse_bool(key, value);
  else if (key == "mask_mode") {
    if (value == "hard") cfg.mask_mode = MaskMode::Hard;
    else if (value == "cosine") cfg.mask_mode = MaskMode::Cosine;
    else throw Error(Errc::InvalidInput, "config key 'mask_mode': expected hard|cosine, got '" + value + "'");
  } else if (key == "ramp_width") cfg.ramp_width = parse_double(key, value);
  else if (key == "preserve_dc") cfg.preserve_dc = parse_bool(key, value);
  else if (key == "scope") cfg.scope = parse_scope(value);
  else if (key == "topk") cfg.topk = parse_size(key, value);
  else if (key == "bins") cfg.bins = (value == "auto") ? 0 : parse_size(key, value);
  else if (key == "entropy_epsilon") cfg.entropy_epsilon = parse_double(key, value);
  else if (key == "entropy_pooling") {
    if (value == "per_layer") cfg.entropy_pooling = EntropyPooling::PerLayer;
    else if (value == "mean") cfg.entropy_pooling = EntropyPooling::Mean;
    else throw Error(Errc::InvalidInput, "config key 'entropy_pooling': expected per_layer|mean, got '" + value + "'");
  } else if (key == "map_aggregation") {
    if (value == "profile") cfg.map_aggregation = MapAggregation::Profile;
    else if (value == "map") cfg.map_aggregation = MapAggregation::Map;
    else throw Error(Errc::InvalidInput, "config key 'map_aggregation': expected profile|map, got '" + value + "'");
  } else {
    throw Error(Errc::InvalidInput, "unknown config key '" + key + "'");
  }
}

/// Parse `key = value` lines; `#` starts a comment. Keys not present keep
/// their defaults. Duplicate keys are rejected.
inline AFMConfig parse_config(std::istream& in) {
  AFMConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::InvalidInput, "config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw Error(Errc::InvalidInput, "duplicate config key '" + key + "'");
    set_config_value(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

inline AFMConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// Canonical text form: every key, fixed order, shortest round-trip doubles.
inline std::string serialize_config(const AFMConfig& cfg) {
  using detail::format_double;
  std::ostringstream out;
  out << "lambda = " << format_double(cfg.lambda) << '\n'
      << "r_c = " << format_double(cfg.r_c) << '\n'
      << "beta = " << format_double(cfg.beta) << '\n'
      << "gamma = " << format_double(cfg.gamma) << '\n'
      << "entropy_gating = " << (cfg.entropy_gating ? "true" : "false") << '\n'
      << "mask_mode = " << (cfg.mask_mode == MaskMode::Hard ? "hard" : "cosine") << '\n'
      << "ramp_width = " << format_double(cfg.ramp_width) << '\n'
      << "preserve_dc = " << (cfg.preserve_dc ? "true" : "false") << '\n'
      << "scope = " << scope_string(cfg.scope) << '\n'
      << "topk = " << cfg.topk << '\n'
      << "bins = " << (cfg.bins == 0 ? std::string("auto") : std::to_string(cfg.bins)) << '\n'
      << "entropy_epsilon = " << format_double(cfg.entropy_epsilon) << '\n'
      << "entropy_pooling = " << (cfg.entropy_pooling == EntropyPooling::PerLayer ? "per_layer" : "mean") << '\n'
      << "map_aggregation = " << (cfg.map_aggregation == MapAggregation::Profile ? "profile" : "map") << '\n';
  return out.str();
}

}  // namespace afm
