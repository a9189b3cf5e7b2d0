#pragma once

#include <stdexcept>
#include <string>

namespace mashost {

// Base for every error thrown by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Graph already holds T_max nodes.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// An operation would break a structural invariant (self edge, backward edge...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Action not legal in the current state; must be masked upstream.
class InvalidActionError : public Error {
 public:
  using Error::Error;
};

// Malformed input file or configuration value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A backend invocation failed (transport, HTTP status, malformed payload).
class BackendError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace mashost
