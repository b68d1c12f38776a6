#pragma once

#include <stdexcept>
#include <string>

namespace misd {

// Every failure raised by the engine derives from Error so callers (the CLI,
// the Python module) can report it uniformly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameter or flag value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Fewer than two classes: nothing to discriminate.
class DegenerateTaskError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Values outside their domain (non-finite pixels, bad labels, short classes).
class DataError : public Error {
 public:
  using Error::Error;
};

// Cosine similarity against a zero-norm vector.
class UndefinedSimilarityError : public Error {
 public:
  using Error::Error;
};

// Metric undefined for the given outcome mix (e.g. AUROC without errors).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Model and data disagree (embedding width, class count).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace misd
