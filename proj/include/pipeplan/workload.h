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
#include <optional>
#include <string>
#include <vector>

namespace pipeplan {

/// One training sample, reduced to its sequence lengths. target_len is 0 for
/// decoder-only models.
struct Sample {
  std::int64_t id = 0;
  std::int64_t input_len = 1;
  std::int64_t target_len = 0;

  std::int64_t total_tokens() const { return input_len + target_len; }
};

/// A token-budgeted group of consecutive samples; the unit the planner
/// partitions into micro-batches.
struct MiniBatch {
  std::vector<Sample> samples;
  std::int64_t token_budget = 0;
};

enum class LengthFamily { Lognormal, Uniform, Mixture };

/// One synthetic length stream. Mixture draws lognormal with probability
/// `lognormal_weight`, uniform [uniform_lo, uniform_hi] otherwise.
struct LengthDistribution {
  LengthFamily family = LengthFamily::Lognormal;
  double log_mean = 5.0;
  double log_sigma = 1.5;
  std::int64_t uniform_lo = 1;
  std::int64_t uniform_hi = 1;
  double lognormal_weight = 0.8;
};

struct SyntheticSpec {
  std::int64_t n = 0;
  LengthDistribution input;
  // Absent target stream means target_len = 0 (decoder-only data).
  std::optional<LengthDistribution> target;
};

/// Where samples come from: a record file (one `input_len<TAB>target_len` line
/// per sample) or a seeded synthetic descriptor. Lengths beyond max_seq_len
/// are truncated, input and target independently.
struct DatasetSpec {
  std::string path;
  std::optional<SyntheticSpec> synthetic;
  std::int64_t max_seq_len = 1;
  std::uint64_t seed = 0;
};

/// Loads or generates the dataset described by `spec`. Throws ParseError on
/// malformed records (naming the line) and std::invalid_argument for empty
/// datasets or unsupported descriptors.
std::vector<Sample> load_dataset(const DatasetSpec& spec);

struct MiniBatchDraw {
  MiniBatch minibatch;
  std::size_t next_cursor = 0;
};

/// Draws the next mini-batch starting at `cursor`: samples are consumed in
/// order until the cumulative token count reaches or crosses the budget, and
/// the crossing sample is included. Returns nullopt at end of epoch.
std::optional<MiniBatchDraw> draw_minibatch(const std::vector<Sample>& samples,
                                            std::int64_t token_budget, std::size_t cursor);

}  // namespace pipeplan
