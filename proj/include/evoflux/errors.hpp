#pragma once

#include <stdexcept>
#include <string>

namespace evoflux {

/// Base class for every error raised by the library. Each subclass maps to one
/// failure mode of a public operation so callers can catch precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EVOFLUX_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

// artifact pool
EVOFLUX_DEFINE_ERROR(DuplicateArtifact);
EVOFLUX_DEFINE_ERROR(GateFailed);
EVOFLUX_DEFINE_ERROR(NotSpeculative);
EVOFLUX_DEFINE_ERROR(RangeError);
EVOFLUX_DEFINE_ERROR(EmptyPool);

// pipeline / config
EVOFLUX_DEFINE_ERROR(ConfigError);
EVOFLUX_DEFINE_ERROR(BoundsError);
EVOFLUX_DEFINE_ERROR(HandlerError);

// staleness
EVOFLUX_DEFINE_ERROR(InvariantViolation);
EVOFLUX_DEFINE_ERROR(FormatError);
EVOFLUX_DEFINE_ERROR(ReflectorError);

// control
EVOFLUX_DEFINE_ERROR(UnknownSample);

// backend
EVOFLUX_DEFINE_ERROR(BackendError);

class BackendUnavailable : public BackendError {
 public:
  using BackendError::BackendError;
};

class Timeout : public BackendError {
 public:
  using BackendError::BackendError;
};

// metrics
EVOFLUX_DEFINE_ERROR(MalformedTrace);
EVOFLUX_DEFINE_ERROR(UndefinedBaseline);

#undef EVOFLUX_DEFINE_ERROR

}  // namespace evoflux
