#pragma once

#include <stdexcept>
#include <string>

namespace repstream {

enum class ErrorCode {
  InvalidArgument,
  ClockViolation,      // tau < 0, or an event scheduled in the past
  ProtocolViolation,   // e.g. starting a source twice
  NoData,              // empty replica set, unknown record
  NoHolders,
  QueryTimeout,
  Conflict,            // duplicate stream registration
  NotFound,
  InvalidScenario,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace repstream
