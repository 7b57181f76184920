#pragma once

#include <stdexcept>
#include <string>

namespace s4cv {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or grid divisibility does not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Network, attention or framework configuration is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied value is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Two parameter sets do not line up (names, shapes).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf detected in gradients or losses.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed files on disk: images, masks, manifests, archives.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace s4cv
