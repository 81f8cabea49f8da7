#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace photonstat {

enum class ErrorCode {
  // photon_stream
  BadMagic,
  TruncatedStream,
  VersionUnsupported,
  UnsortedRecords,
  MicrotimeOverflow,
  ChannelOutOfRange,
  InvalidHeader,
  // emitter_sim
  InvalidParams,
  UnsupportedBlinkingModel,
  // correlation
  EmptyStream,
  SingleChannelStream,
  WindowTooWide,
  ZeroTotalRate,
  TraceTooShort,
  NotBimodal,
  // lifetime_flid
  FitDiverged,
  InsufficientCounts,
  TooFewPhotons,
  NonPositiveDelays,
  InsufficientBins,
  // fitting
  SingularCurvature,
  InsufficientSpan,
  NegativeFluence,
  InvalidArgument,
  // cli
  ConfigInvalid,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the toolkit. `module()` names the component that
/// raised it so reports can attribute errors without parsing messages.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, std::string module, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace photonstat
