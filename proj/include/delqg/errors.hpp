#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace delqg {

/// Base class of every error raised by the toolkit. Each subclass maps to one
/// failure class, which the command-line front end turns into an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class UnsortedSubset : public Error {
 public:
  using Error::Error;
};

class NotASubset : public Error {
 public:
  using Error::Error;
};

class NoStabilizingSolution : public Error {
 public:
  using Error::Error;
};

class NotSchurStable : public Error {
 public:
  using Error::Error;
};

class Overflow : public Error {
 public:
  using Error::Error;
};

class InfeasibleDims : public Error {
 public:
  using Error::Error;
};

/// Σ₂₂ of the Hamiltonian flow is too ill-conditioned to form the modified
/// cost matrix.
class SingularSigma22 : public Error {
 public:
  using Error::Error;
};

/// ‖H‖·τ exceeds the configured cap; e^{Hτ} is not representable reliably.
class DelayTooLarge : public Error {
 public:
  using Error::Error;
};

class SingularResolvent : public Error {
 public:
  using Error::Error;
};

class NonIntegerDelayRatio : public Error {
 public:
  using Error::Error;
};

class StepTooLarge : public Error {
 public:
  using Error::Error;
};

class Divergence : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `path()` is a JSON pointer to the offending field.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

namespace internal {

template <typename E>
bool rethrow_as(const std::exception_ptr& p, const std::string& prefix) {
  try {
    std::rethrow_exception(p);
  } catch (const E& e) {
    throw E(prefix + ": " + e.what());
  } catch (...) {
    return false;
  }
}

}  // namespace internal

/// Rethrows `p` with `context` prepended to the message, keeping the
/// exception's class within the toolkit's hierarchy.
[[noreturn]] inline void rethrow_with_context(const std::exception_ptr& p,
                                              const std::string& context) {
  internal::rethrow_as<DimensionMismatch>(p, context);
  internal::rethrow_as<IndexOutOfRange>(p, context);
  internal::rethrow_as<UnsortedSubset>(p, context);
  internal::rethrow_as<NotASubset>(p, context);
  internal::rethrow_as<NoStabilizingSolution>(p, context);
  internal::rethrow_as<NotSchurStable>(p, context);
  internal::rethrow_as<Overflow>(p, context);
  internal::rethrow_as<InfeasibleDims>(p, context);
  internal::rethrow_as<SingularSigma22>(p, context);
  internal::rethrow_as<DelayTooLarge>(p, context);
  internal::rethrow_as<SingularResolvent>(p, context);
  internal::rethrow_as<NonIntegerDelayRatio>(p, context);
  internal::rethrow_as<StepTooLarge>(p, context);
  internal::rethrow_as<Divergence>(p, context);
  std::rethrow_exception(p);
}

}  // namespace delqg
