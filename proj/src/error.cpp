#include "sslab/error.hpp"

namespace sslab {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidToken: return "invalid-token";
    case ErrorCode::kInvalidSignal: return "invalid-signal";
    case ErrorCode::kInvalidPairing: return "invalid-pairing";
    case ErrorCode::kNumericFault: return "numeric-fault";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kMisconfiguration: return "misconfiguration";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kPretrainFailure: return "pretrain-failure";
    case ErrorCode::kRatioUndefined: return "ratio-undefined";
    case ErrorCode::kBusy: return "busy";
  }
  return "unknown";
}

}  // namespace sslab
