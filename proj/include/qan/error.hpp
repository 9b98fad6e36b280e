#ifndef QAN_ERROR_HPP_
#define QAN_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace qan {

/// Raised for contract violations (shape mismatches, malformed input,
/// non-finite values). The message names the offending object.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Raised by file loaders; carries the 1-based line number of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace qan

#endif  // QAN_ERROR_HPP_
