#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gsshare {

enum class ErrorCode {
  InvalidArgument,
  InsufficientData,
  DimensionMismatch,
  BadMagic,
  BadVersion,
  CrcMismatch,
  Truncated,
  CorruptStream,
  SymbolOutOfAlphabet,
  KindMismatch,
  AnchorMismatch,
  OutOfOrderUpdate,
  DuplicateStage,
  UnknownStage,
  FutureStage,
  NoBoundary,
  CameraInSolid,
  EmptyServer,
  Protocol,
  Transport,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gsshare
