#ifndef IMPS_ERRORS_HPP
#define IMPS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace imps {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cholesky met a non-positive pivot.
class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(long pivot)
      : Error("matrix is not positive definite (pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  long pivot() const noexcept { return pivot_; }

 private:
  long pivot_;
};

class NoBracket : public Error {
 public:
  using Error::Error;
};

class NotConverged : public Error {
 public:
  using Error::Error;
};

/// Every weight of an ensemble vanished.
class DegenerateEnsemble : public Error {
 public:
  using Error::Error;
};

/// The noise/control-cost compatibility condition gamma G R^-1 G^T = G Q Q^T G^T fails.
class ConditionViolated : public Error {
 public:
  using Error::Error;
};

class SteeringSingularity : public Error {
 public:
  using Error::Error;
};

class UnknownLandmark : public Error {
 public:
  explicit UnknownLandmark(int id)
      : Error("unknown landmark id " + std::to_string(id)), id_(id) {}
  int id() const noexcept { return id_; }

 private:
  int id_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace imps

#endif  // IMPS_ERRORS_HPP
