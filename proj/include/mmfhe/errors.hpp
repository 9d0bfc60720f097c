/*
 * Copyright 2026 The mmfhe Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MMFHE_ERRORS_HPP_
#define MMFHE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mmfhe {

// Caller supplied malformed data: wrong dimensions, out-of-range values,
// unparseable files. CLI exit code 2.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string &what) : std::invalid_argument(what) {}
};

// A factorization or solve failed even after jitter.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string &what) : std::runtime_error(what) {}
};

// Iterative solver hit its cap. CLI exit code 3.
class ConvergenceError : public std::runtime_error {
 public:
  explicit ConvergenceError(const std::string &what)
      : std::runtime_error(what) {}
};

// Learning could not satisfy its own preconditions (e.g. no M gives tau > 0).
class LearnError : public std::runtime_error {
 public:
  explicit LearnError(const std::string &what) : std::runtime_error(what) {}
};

// Framing, message decoding, timeouts and session aborts.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string &what) : std::runtime_error(what) {}
};

}  // namespace mmfhe

#endif  // MMFHE_ERRORS_HPP_
