#pragma once

#include <stdexcept>
#include <string>

namespace omla {

enum class ErrorKind {
  kShape,
  kContract,
  kFormat,
  kUnsupportedVersion,
  kConfig,
  kIo,
  kLayout,
};

/// Base of every exception thrown by the library. `kind()` drives the C API
/// error code mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::kFormat, what) {}
};

class UnsupportedVersionError : public Error {
 public:
  explicit UnsupportedVersionError(const std::string& what)
      : Error(ErrorKind::kUnsupportedVersion, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class LayoutError : public Error {
 public:
  explicit LayoutError(const std::string& what) : Error(ErrorKind::kLayout, what) {}
};

}  // namespace omla
