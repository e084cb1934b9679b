// Copyright 2026 The patchforge Authors.
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace patchforge {

/// Root of every exception the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes do not agree, or a dimension is zero/negative.
class InvalidShape : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition (label out of range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong state (backward without a tape, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad user-facing input: a patch larger than its slide, a non-square patch.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// An engine operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint blob failed its checksum or was truncated.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; `line()` is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace patchforge
