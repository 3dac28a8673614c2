/* Copyright 2026 The avsync Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace avsync {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AVSYNC_DEFINE_ERROR(Name)            \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(#Name ": " + what) {}        \
  }

AVSYNC_DEFINE_ERROR(InvalidInput);
AVSYNC_DEFINE_ERROR(ShapeError);
AVSYNC_DEFINE_ERROR(InvalidBatch);
AVSYNC_DEFINE_ERROR(InvalidConfig);
AVSYNC_DEFINE_ERROR(InvalidPhase);
AVSYNC_DEFINE_ERROR(DegenerateDistance);
AVSYNC_DEFINE_ERROR(IoError);

#undef AVSYNC_DEFINE_ERROR

}  // namespace avsync
