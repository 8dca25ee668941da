#pragma once

#include <stdexcept>
#include <string>

namespace cpfit {

/// Shapes, modes or ranks that do not fit together.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A dense oracle was asked for a problem above the desk-scale limit.
class SizeGuardError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// The kernel matrix K fails the invertibility test, so its explicit
/// inverse does not exist and callers must take the I + Psi*K route.
class SingularKernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A dense factorization or solve produced a (numerically) singular system.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable tensor files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpfit
