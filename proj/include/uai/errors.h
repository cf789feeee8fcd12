#ifndef UAI_ERRORS_H_
#define UAI_ERRORS_H_

#include <stdexcept>
#include <string>
#include <vector>

namespace uai {

// Base of every error raised by the library. The subclasses map one-to-one
// onto CLI exit codes and HTTP status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not agree.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A call made in the wrong state or with an invalid combination of arguments.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed input files. `offset` is a byte offset for binary formats and a
// 1-based row number for CSV, or -1 when not applicable.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long long offset = -1)
      : Error(offset >= 0 ? what + " (at " + std::to_string(offset) + ")"
                          : what),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// Non-finite loss or gradient during optimization.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

// A submission that names indices not in the pending queue (or misses some).
class RejectedSubmission : public Error {
 public:
  RejectedSubmission(const std::string& what, std::vector<std::size_t> offenders)
      : Error(what), offenders_(std::move(offenders)) {}
  const std::vector<std::size_t>& offenders() const { return offenders_; }

 private:
  std::vector<std::size_t> offenders_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or container written by an incompatible schema version.
class MigrationError : public Error {
 public:
  using Error::Error;
};

}  // namespace uai

#endif  // UAI_ERRORS_H_
