#include "photonstat/error.hpp"

namespace photonstat {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedStream: return "TruncatedStream";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::UnsortedRecords: return "UnsortedRecords";
    case ErrorCode::MicrotimeOverflow: return "MicrotimeOverflow";
    case ErrorCode::ChannelOutOfRange: return "ChannelOutOfRange";
    case ErrorCode::InvalidHeader: return "InvalidHeader";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::UnsupportedBlinkingModel: return "UnsupportedBlinkingModel";
    case ErrorCode::EmptyStream: return "EmptyStream";
    case ErrorCode::SingleChannelStream: return "SingleChannelStream";
    case ErrorCode::WindowTooWide: return "WindowTooWide";
    case ErrorCode::ZeroTotalRate: return "ZeroTotalRate";
    case ErrorCode::TraceTooShort: return "TraceTooShort";
    case ErrorCode::NotBimodal: return "NotBimodal";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::InsufficientCounts: return "InsufficientCounts";
    case ErrorCode::TooFewPhotons: return "TooFewPhotons";
    case ErrorCode::NonPositiveDelays: return "NonPositiveDelays";
    case ErrorCode::InsufficientBins: return "InsufficientBins";
    case ErrorCode::SingularCurvature: return "SingularCurvature";
    case ErrorCode::InsufficientSpan: return "InsufficientSpan";
    case ErrorCode::NegativeFluence: return "NegativeFluence";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, std::string module, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      module_(std::move(module)) {}

}  // namespace photonstat
