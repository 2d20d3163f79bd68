// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace addrtag {

/// Base class for every error raised by the library. Callers that only care
/// about "bad input vs. bug" can catch this and inspect the dynamic type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t token_count, std::size_t tag_count)
      : Error("length mismatch: " + std::to_string(token_count) + " tokens vs " +
              std::to_string(tag_count) + " tags"),
        token_count(token_count),
        tag_count(tag_count) {}
  std::size_t token_count;
  std::size_t tag_count;
};

class UnknownTag : public Error {
 public:
  explicit UnknownTag(std::string name) : Error("unknown tag: " + name), name(std::move(name)) {}
  std::string name;
};

class EmptyAddress : public Error {
 public:
  EmptyAddress() : Error("address has no tokens") {}
  explicit EmptyAddress(std::size_t index)
      : Error("address " + std::to_string(index) + " has no tokens"), index(index) {}
  std::optional<std::size_t> index;
};

class InvalidVocabulary : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("corpus is empty") {}
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

class NotScalarLoss : public Error {
 public:
  NotScalarLoss() : Error("backward() requires a 1x1 loss") {}
};

class EmptyDataset : public Error {
 public:
  EmptyDataset() : Error("dataset is empty") {}
};

class InvalidRatio : public Error {
 public:
  explicit InvalidRatio(double ratio)
      : Error("train_ratio must lie in (0, 1), got " + std::to_string(ratio)), ratio(ratio) {}
  double ratio;
};

class EmptyInput : public Error {
 public:
  EmptyInput() : Error("input is empty") {}
};

/// Malformed line in a line-oriented file. `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

/// A dataset line parsed fine but failed record validation.
class ValidationError : public Error {
 public:
  ValidationError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

class VersionMismatch : public Error {
 public:
  explicit VersionMismatch(std::string found)
      : Error("unsupported checkpoint version: " + found), found(std::move(found)) {}
  std::string found;
};

class CorruptPayload : public Error {
 public:
  explicit CorruptPayload(std::string array_name)
      : Error("corrupt checkpoint array: " + array_name), array_name(std::move(array_name)) {}
  std::string array_name;
};

class TruncatedFile : public Error {
 public:
  explicit TruncatedFile(const std::string& what) : Error("truncated file: " + what) {}
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CorpusEmpty : public Error {
 public:
  CorpusEmpty() : Error("benchmark corpus is empty") {}
};

class ModelLoadFailure : public Error {
 public:
  ModelLoadFailure(std::string path, const std::string& why)
      : Error("cannot load model " + path + ": " + why), path(std::move(path)) {}
  std::string path;
};

class BatchInconsistency : public Error {
 public:
  using Error::Error;
};

}  // namespace addrtag
