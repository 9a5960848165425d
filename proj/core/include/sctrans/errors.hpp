#pragma once

#include <stdexcept>
#include <string>

namespace sct {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid layer/model configuration or mismatched tensor shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition (e.g. spatial extents not divisible by 16).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// API misuse such as calling backward on an empty tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace sct
