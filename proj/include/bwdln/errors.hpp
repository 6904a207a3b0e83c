#pragma once

#include <stdexcept>
#include <string>

namespace bwdln {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller-side contract violations: bad shapes, bad parameters, unmet
/// hypotheses. The CLI maps these to exit code 2.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class InputError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class NotPsdError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class RankError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class TauTooLargeError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class NonDistinctSpectrumError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class CombinatorialLimitError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class DimensionLimitError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

class InsufficientDataError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// The initial point does not satisfy the modified deficiency margin.
class MdmFailedError : public PreconditionError {
 public:
  MdmFailedError(const std::string& what, double margin)
      : PreconditionError(what), margin_(margin) {}
  double margin() const noexcept { return margin_; }

 private:
  double margin_;
};

/// Runtime failures of a numerical run.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class StepSizeUnderflowError : public Error {
 public:
  using Error::Error;
};

/// A computed quantity violates an identity that must hold up to round-off.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace bwdln
