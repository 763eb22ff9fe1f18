#ifndef NRS_ERRORS_HPP_
#define NRS_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace nrs {

// Bad flags, malformed config files, inconsistent settings.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / embedding-file / checkpoint content violates an invariant.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace nrs

#endif  // NRS_ERRORS_HPP_
