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

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pipeplan/errors.h"
#include "pipeplan/rng.h"
#include "pipeplan/workload.h"

using namespace pipeplan;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path(std::filesystem::temp_directory_path() / name) {
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("load_dataset truncates input and target independently") {
  TempFile file("pp_workload_trunc.tsv", "5\t2\n9000\t1\n");
  DatasetSpec spec;
  spec.path = file.path.string();
  spec.max_seq_len = 8192;
  auto samples = load_dataset(spec);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].input_len == 5);
  CHECK(samples[0].target_len == 2);
  CHECK(samples[1].input_len == 8192);
  CHECK(samples[1].target_len == 1);
}

TEST_CASE("load_dataset reports malformed records with the line number") {
  TempFile file("pp_workload_bad.tsv", "5\t2\nnot_a_number\t1\n");
  DatasetSpec spec;
  spec.path = file.path.string();
  spec.max_seq_len = 100;
  try {
    load_dataset(spec);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("load_dataset rejects empty datasets and zero-length inputs") {
  TempFile empty("pp_workload_empty.tsv", "");
  DatasetSpec spec;
  spec.path = empty.path.string();
  spec.max_seq_len = 100;
  CHECK_THROWS_AS(load_dataset(spec), std::invalid_argument);

  TempFile zero("pp_workload_zero.tsv", "0\t3\n");
  spec.path = zero.path.string();
  CHECK_THROWS_AS(load_dataset(spec), ParseError);
}

TEST_CASE("synthetic generation is deterministic under a fixed seed") {
  DatasetSpec spec;
  SyntheticSpec syn;
  syn.n = 3;
  syn.input.family = LengthFamily::Lognormal;
  syn.input.log_mean = 5.0;
  syn.input.log_sigma = 1.5;
  spec.synthetic = syn;
  spec.max_seq_len = 1 << 20;
  spec.seed = 7;

  auto a = load_dataset(spec);
  auto b = load_dataset(spec);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].input_len == b[i].input_len);
    CHECK(a[i].target_len == 0);
    CHECK(a[i].input_len >= 1);
  }
}

TEST_CASE("mixture tail mass shows up in the empirical 99th percentile") {
  DatasetSpec spec;
  SyntheticSpec syn;
  syn.n = 100000;
  syn.input.family = LengthFamily::Mixture;
  syn.input.log_mean = 5.0;
  syn.input.log_sigma = 1.5;
  syn.input.uniform_lo = 2048;
  syn.input.uniform_hi = 8192;
  syn.input.lognormal_weight = 0.8;
  spec.synthetic = syn;
  spec.max_seq_len = 8192;
  spec.seed = 11;

  auto samples = load_dataset(spec);
  std::vector<std::int64_t> lens;
  lens.reserve(samples.size());
  for (const auto& s : samples) lens.push_back(s.input_len);
  std::sort(lens.begin(), lens.end());
  const std::int64_t p99 = lens[static_cast<std::size_t>(lens.size() * 99 / 100)];
  CHECK(p99 >= 2048);
}

TEST_CASE("draw_minibatch includes the budget-crossing sample") {
  std::vector<Sample> samples = {{0, 10, 0}, {1, 20, 0}, {2, 40, 0}};
  auto draw = draw_minibatch(samples, 35, 0);
  REQUIRE(draw.has_value());
  CHECK(draw->minibatch.samples.size() == 3);
  CHECK(draw->next_cursor == 3);
  CHECK_FALSE(draw_minibatch(samples, 35, draw->next_cursor).has_value());
}

TEST_CASE("draw_minibatch always includes at least the first sample") {
  std::vector<Sample> samples = {{0, 100, 0}};
  auto draw = draw_minibatch(samples, 64, 0);
  REQUIRE(draw.has_value());
  CHECK(draw->minibatch.samples.size() == 1);
  CHECK(draw->next_cursor == 1);
}

TEST_CASE("uniform samples fill mini-batches exactly to the budget") {
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back({i, 16, 16});
  std::size_t cursor = 0;
  while (auto draw = draw_minibatch(samples, 64, cursor)) {
    CHECK(draw->minibatch.samples.size() == 2);
    cursor = draw->next_cursor;
  }
  CHECK(cursor == samples.size());
}

TEST_CASE("mini-batch stream preserves dataset order and respects the budget rule") {
  Rng rng(99);
  std::vector<Sample> samples;
  for (int i = 0; i < 300; ++i)
    samples.push_back({i, rng.next_int(1, 500), rng.next_int(0, 100)});
  const std::int64_t budget = 1500;

  std::vector<Sample> concatenated;
  std::int64_t max_tokens = 0;
  for (const auto& s : samples) max_tokens = std::max(max_tokens, s.total_tokens());

  std::size_t cursor = 0;
  std::vector<MiniBatch> drawn;
  while (auto draw = draw_minibatch(samples, budget, cursor)) {
    drawn.push_back(draw->minibatch);
    cursor = draw->next_cursor;
    for (const auto& s : draw->minibatch.samples) concatenated.push_back(s);
  }

  REQUIRE(concatenated.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) CHECK(concatenated[i].id == samples[i].id);

  for (std::size_t b = 0; b < drawn.size(); ++b) {
    std::int64_t total = 0;
    for (const auto& s : drawn[b].samples) total += s.total_tokens();
    const std::int64_t without_last = total - drawn[b].samples.back().total_tokens();
    CHECK(without_last < budget);
    CHECK(total <= budget + max_tokens);
    if (b + 1 < drawn.size()) CHECK(total >= budget - max_tokens);
  }
}
