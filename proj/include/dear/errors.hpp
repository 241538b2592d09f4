#pragma once

#include <stdexcept>
#include <string>

namespace dear {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidMaskError : public Error {
 public:
  using Error::Error;
};

class CycleError : public Error {
 public:
  CycleError(int node, const std::string& what) : Error(what), node_(node) {}
  // 0-based index of one node lying on a directed cycle.
  int node() const { return node_; }

 private:
  int node_;
};

class InvalidPermutationError : public Error {
 public:
  using Error::Error;
};

class InvalidTransformError : public Error {
 public:
  using Error::Error;
};

class RankError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ArityError : public Error {
 public:
  using Error::Error;
};

class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
};

class GroupingError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class CheckpointErrorCode { kIo, kBadMagic, kVersionMismatch, kTruncated, kChecksum, kMalformed };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what) : Error(what), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

}  // namespace dear
