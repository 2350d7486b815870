#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kelab {

// Failure categories. Commands translate these into machine-readable error
// records; tests match on the category rather than on message text.
enum class errc {
  invalid_input,
  numeric,
  template_error,
  record_error,
  file_error,
  config_error,
  degenerate_key,
  covariance_failure,
  solve_failure,
  ckpt_bad_magic,
  ckpt_version,
  ckpt_truncated,
  ckpt_shape,
  ckpt_integrity,
  missing_artifact,
  infeasible,
};

const char* errc_name(errc kind);

class Error : public std::runtime_error {
 public:
  Error(errc kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  errc kind() const { return kind_; }

 private:
  errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool ok, errc kind, const std::string& message) {
  if (!ok) fail(kind, message);
}

}  // namespace kelab
