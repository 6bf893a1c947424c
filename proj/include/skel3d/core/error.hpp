#pragma once

#include <stdexcept>
#include <string>

namespace skel3d {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 1, InputError/DataError/RenderError -> 2, NumericError -> 3.

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace skel3d
