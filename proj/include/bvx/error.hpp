#ifndef BVX_ERROR_HPP
#define BVX_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bvx {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input (IDX files, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Wrong linear-algebra regime, e.g. a rank-deficient design on the closed-form path.
class RegimeError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double gradient_norm)
      : Error(what), gradient_norm_(gradient_norm) {}
  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(int epoch)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class TuningError : public Error {
 public:
  using Error::Error;
};

class EnsembleError : public Error {
 public:
  using Cell = std::pair<std::size_t, std::size_t>;

  explicit EnsembleError(std::vector<Cell> failures)
      : Error(describe(failures)), failures_(std::move(failures)) {}
  const std::vector<Cell>& failures() const noexcept { return failures_; }

 private:
  static std::string describe(const std::vector<Cell>& failures) {
    std::string msg = "ensemble members diverged:";
    for (const auto& [s, o] : failures) {
      msg += " (" + std::to_string(s) + "," + std::to_string(o) + ")";
    }
    return msg;
  }

  std::vector<Cell> failures_;
};

/// A caller violated an input contract (e.g. predictions that are not probability vectors).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace bvx

#endif  // BVX_ERROR_HPP
