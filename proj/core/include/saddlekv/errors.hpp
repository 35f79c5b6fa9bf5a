#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace saddlekv {

// Precondition or numeric-domain violation (bad dims, empty input, NaN).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed byte stream. `offset` is the byte position where decoding failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Well-formed bytes carrying semantically invalid content (e.g. a row that is
// not a probability distribution under strict validation).
class ValidationError : public ParseError {
 public:
  using ParseError::ParseError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace saddlekv
