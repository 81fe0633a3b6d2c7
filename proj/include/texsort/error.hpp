// Copyright 2026 The texsort Authors
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

namespace texsort {

/// Bad input: malformed manifest, config, or arguments. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Failure while doing work on valid input (I/O, backend, training). Exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pretrained weights for a backbone could not be resolved.
class WeightsUnavailable : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

/// A detector or segmenter backend failed; the message carries stage and image id.
class BackendError : public RuntimeFailure {
public:
    BackendError(std::string stage, std::string image_id, const std::string& what)
        : RuntimeFailure(stage + " failed on image '" + image_id + "': " + what),
          stage_(std::move(stage)), image_id_(std::move(image_id)) {}

    const std::string& stage() const noexcept { return stage_; }
    const std::string& image_id() const noexcept { return image_id_; }

private:
    std::string stage_;
    std::string image_id_;
};

}  // namespace texsort
