// Copyright 2026 The MFUR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MFUR_ERRORS_HPP_
#define MFUR_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mfur {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value lies outside the domain of a function (log of a non-positive
// number, empty reduction, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A binary file does not follow its declared layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Dataset or checkpoint could not be loaded.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Bad command line or configuration input.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfur

#endif  // MFUR_ERRORS_HPP_
