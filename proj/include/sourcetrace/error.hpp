// Copyright 2026  Sourcetrace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace sourcetrace {

// Base class of every error thrown by this library.  The CLI maps the
// subclasses onto its exit-code contract (see tools/): configuration and
// filesystem problems exit 1, data validation problems exit 2, numerical
// failures exit 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke a documented precondition (shape mismatch, bad label, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Input that is numerically meaningless (zero-norm embedding, collapsed
// projection, all-zero prototype mix).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

// A byte stream or text document failed to parse.  The kind distinguishes
// the failure modes callers may want to react to individually.
class ParseError : public Error {
 public:
  enum class Kind {
    bad_magic,
    bad_version,
    truncated,
    trailing_bytes,
    non_finite,
    malformed,
  };

  ParseError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Cross-file consistency failure (manifest/embedding join, conflicting
// attack metadata, refusing to serialize non-finite values).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Experiment-protocol violation (partition overlap, speaker leakage,
// enrollment insufficiency, empty trial pools).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure (missing or unwritable path).
class IoError : public Error {
 public:
  using Error::Error;
};

// The experiment configuration document is unusable.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical failure (gradient check mismatch, non-finite objective).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sourcetrace
