// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace distillkit {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes are incompatible with an operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

// A forward op produced (or was handed) a non-finite value.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

// An API precondition was violated by the caller.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract error: " + what) {}
};

// Bad run/model/objective configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

// Malformed input file (wav, csv, checkpoint, manifest).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

// Filesystem trouble distinct from malformed content.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

// A gradient-check oracle cannot certify anything (e.g. the probed
// function is not deterministic, so finite differences are meaningless).
class OracleError : public Error {
 public:
  explicit OracleError(const std::string& what) : Error("oracle error: " + what) {}
};

// Training aborted mid-run; carries the step and learning rate at abort.
class TrainAbort : public Error {
 public:
  TrainAbort(const std::string& what, unsigned long long step, double lr)
      : Error("training aborted at step " + std::to_string(step) +
              " (lr=" + std::to_string(lr) + "): " + what),
        step_(step),
        lr_(lr) {}
  unsigned long long step() const { return step_; }
  double lr() const { return lr_; }

 private:
  unsigned long long step_;
  double lr_;
};

}  // namespace distillkit
