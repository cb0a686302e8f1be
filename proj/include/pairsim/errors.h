/* Copyright 2026 The pairsim Authors. All Rights Reserved.

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

namespace pairsim {

// Malformed input file (trace, config). line is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " +
                                          what
                                    : what),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

// Invalid configuration or argument. path names the offending field, e.g.
// "cluster.n_instances".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path.empty() ? what : path + ": " + what),
        path_(path) {}

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Operation not valid in the current state (empty ring, unknown instance).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace pairsim
