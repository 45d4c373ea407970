#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace seqgrasp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input (hand spec, config, parameters).
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, empty or degenerate geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Record / dataset file problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Raised by os_select when no opposition space is left.
class OsExhausted : public Error {
 public:
  OsExhausted() : Error("no opposition space available") {}
};

using WarningHandler = std::function<void(const std::string&)>;

/// Emits a warning through the installed handler (stderr by default).
void warn(const std::string& message);

/// Installs a handler and returns the previous one.
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace seqgrasp
