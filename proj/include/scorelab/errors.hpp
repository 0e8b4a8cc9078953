#pragma once

#include <stdexcept>
#include <string>

namespace scorelab {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for a tape primitive or block.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration (bad field, missing path, bad wiring).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset file or inconsistent dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure while writing run artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace scorelab
