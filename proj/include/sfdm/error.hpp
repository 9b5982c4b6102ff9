#pragma once

#include <stdexcept>
#include <string>

namespace sfdm {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SFDM_DEFINE_ERROR(Name)         \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

SFDM_DEFINE_ERROR(ShapeMismatch);
SFDM_DEFINE_ERROR(RangeError);
SFDM_DEFINE_ERROR(NonFiniteValue);
SFDM_DEFINE_ERROR(MissingGroundTruth);
SFDM_DEFINE_ERROR(TooSmallForScales);
SFDM_DEFINE_ERROR(EmptyScoreSet);
SFDM_DEFINE_ERROR(ScenarioNotApplicable);
SFDM_DEFINE_ERROR(DivisionDomain);
SFDM_DEFINE_ERROR(InsufficientIdentities);
SFDM_DEFINE_ERROR(UnknownKind);
SFDM_DEFINE_ERROR(DecodeError);
SFDM_DEFINE_ERROR(MissingLiveCapture);
SFDM_DEFINE_ERROR(EmptyDataset);
SFDM_DEFINE_ERROR(ConfigError);
SFDM_DEFINE_ERROR(IoError);
SFDM_DEFINE_ERROR(StateMismatch);

#undef SFDM_DEFINE_ERROR

}  // namespace sfdm
