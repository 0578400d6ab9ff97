#pragma once

#include <stdexcept>
#include <string>

namespace curatrix {

// Base for every error the library throws. Subclasses mark the stage that failed.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

// Misconfiguration that must abort a run (bad endpoint contract, dimension drift, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class FilterError : public Error {
 public:
  using Error::Error;
};

}  // namespace curatrix
