#pragma once

#include <stdexcept>
#include <string>

namespace depthprobe {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid argument or violated precondition.
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& what) : Error(what) {}
};

// Malformed input file (.dpw container, FASTA, assay CSV, ...).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

}  // namespace depthprobe
