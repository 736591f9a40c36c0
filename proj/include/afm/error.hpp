#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace afm {

enum class Errc {
  InvalidInput,
  InvalidParameter,
  DegenerateSignal,
  NumericalError,
  BadMagic,
  UnsupportedVersion,
  TruncatedTrace,
  NonFinitePayload,
  Io,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidInput: return "InvalidInput";
    case Errc::InvalidParameter: return "InvalidParameter";
    case Errc::DegenerateSignal: return "DegenerateSignal";
    case Errc::NumericalError: return "NumericalError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::TruncatedTrace: return "TruncatedTrace";
    case Errc::NonFinitePayload: return "NonFinitePayload";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the toolkit; the category lives in code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace afm
