#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace zoforge {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller supplied an argument outside the operation's domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An objective returned NaN or infinity while a perturbed loss was being
/// measured. `evaluation()` names which of the evaluations failed.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::string evaluation, double value)
      : Error("non-finite loss in " + evaluation + " evaluation: " + std::to_string(value)),
        evaluation_(std::move(evaluation)),
        value_(value) {}

  const std::string& evaluation() const noexcept { return evaluation_; }
  double value() const noexcept { return value_; }

 private:
  std::string evaluation_;
  double value_;
};

/// Training stopped because the loss blew up or turned non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::uint64_t step, const std::string& what)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::uint64_t step() const noexcept { return step_; }

 private:
  std::uint64_t step_;
};

}  // namespace zoforge
