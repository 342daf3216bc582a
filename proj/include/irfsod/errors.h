// Copyright 2026 The irfsod Authors. All Rights Reserved.
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
#ifndef IRFSOD_ERRORS_H_
#define IRFSOD_ERRORS_H_

#include <stdexcept>
#include <string>

namespace irfsod {

// Base class for every error raised by the library. The subclasses map onto
// the CLI exit codes (usage 2, data 3, numerical 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, configuration keys or values, shape mismatches.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed files, insufficient instances, corrupt checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or activations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace irfsod

#endif  // IRFSOD_ERRORS_H_
