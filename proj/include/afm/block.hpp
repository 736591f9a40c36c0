#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace afm {

/// U-Net stage a cross-attention layer belongs to.
enum class Block : std::uint8_t { Encoder = 0, Middle = 1, Decoder = 2 };

/// Classifier-free-guidance pass a record was captured from.
enum class Pass : std::uint8_t { Cond = 0, Uncond = 1, Merged = 2 };

inline constexpr std::uint16_t kHeadAveraged = 0xFFFF;

constexpr std::string_view block_name(Block b) {
  switch (b) {
    case Block::Encoder: return "encoder";
    case Block::Middle: return "middle";
    case Block::Decoder: return "decoder";
  }
  return "unknown";
}

inline std::optional<Block> parse_block(std::string_view name) {
  if (name == "encoder") return Block::Encoder;
  if (name == "middle") return Block::Middle;
  if (name == "decoder") return Block::Decoder;
  return std::nullopt;
}

constexpr std::string_view pass_name(Pass p) {
  switch (p) {
    case Pass::Cond: return "cond";
    case Pass::Uncond: return "uncond";
    case Pass::Merged: return "merged";
  }
  return "unknown";
}

inline std::optional<Pass> parse_pass(std::string_view name) {
  if (name == "cond") return Pass::Cond;
  if (name == "uncond") return Pass::Uncond;
  if (name == "merged") return Pass::Merged;
  return std::nullopt;
}

}  // namespace afm
