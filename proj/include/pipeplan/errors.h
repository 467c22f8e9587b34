/* Copyright 2026 The pipeplan Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pipeplan {

/// Input files (datasets, cost grids, execution plans) that fail to parse.
/// Carries the line number and byte offset of the offending location.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::int64_t line, std::int64_t byte_offset)
      : std::runtime_error(what + " (line " + std::to_string(line) + ", byte " +
                           std::to_string(byte_offset) + ")"),
        line_(line),
        byte_offset_(byte_offset) {}

  std::int64_t line() const { return line_; }
  std::int64_t byte_offset() const { return byte_offset_; }

 private:
  std::int64_t line_;
  std::int64_t byte_offset_;
};

/// A planning request that cannot be satisfied under the given memory limits.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, std::int64_t sample_id, int stage)
      : std::runtime_error(what), sample_id_(sample_id), stage_(stage) {}

  /// Offending sample id, or -1 when not sample-specific.
  std::int64_t sample_id() const { return sample_id_; }
  /// Lowest stage index where the violation occurs, or -1.
  int stage() const { return stage_; }

 private:
  std::int64_t sample_id_;
  int stage_;
};

}  // namespace pipeplan
