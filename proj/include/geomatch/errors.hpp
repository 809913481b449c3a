#pragma once

#include <stdexcept>
#include <string>

namespace geomatch {

// Shape or argument contract violated by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Ill-conditioned or non-convergent numerical computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric that is undefined for the supplied input (empty sets, empty union).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Missing files, unreadable images, malformed or truncated serialized data.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A robust estimator could not produce a model (too few matches or inliers).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geomatch
