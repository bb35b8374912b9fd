#pragma once

#include <stdexcept>
#include <string>

namespace vem {

// Base for every error raised by the library. Subclasses distinguish the
// failure family so callers (and the CLI) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (bad counts, ranges, stage).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed: shape mismatch, non-finite values, bad ranges.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A file exists but its bytes are not a valid encoding.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace vem
