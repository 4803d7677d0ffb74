// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dcr {

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SchemaMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a cosine similarity would divide by a zero-norm row.
struct DegenerateInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidBatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoValidGallery : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace dcr
