// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace specnovo {

// Base for everything thrown by this library. The CLI maps subclasses to
// exit codes: usage 2, data 3, numerics 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external input (JSON, JSONL, MGF, predictions files).
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::size_t position = 0)
      : Error(msg), position(position) {}
  std::size_t position;
};

// Structurally valid input whose values violate a domain contract.
class DomainError : public Error {
 public:
  using Error::Error;
};

class EmptySpectrumError : public DomainError {
 public:
  using DomainError::DomainError;
};

class FormulaError : public ParseError {
 public:
  FormulaError(const std::string& msg, std::size_t position = 0)
      : ParseError(msg, position) {}
};

// SMILES lexing failure.
class TokenError : public ParseError {
 public:
  TokenError(const std::string& msg, std::size_t position = 0)
      : ParseError(msg, position) {}
};

// SMILES that lexes but does not form a graph (ring/branch bookkeeping).
class StructureError : public Error {
 public:
  using Error::Error;
};

class ValenceError : public StructureError {
 public:
  ValenceError(const std::string& msg, int atom_index)
      : StructureError(msg), atom_index(atom_index) {}
  int atom_index;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericsError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Beam search finished with zero surviving hypotheses.
class EmptyBeam : public Error {
 public:
  using Error::Error;
};

}  // namespace specnovo
