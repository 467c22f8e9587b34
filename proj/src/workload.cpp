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

#include "pipeplan/workload.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pipeplan/errors.h"
#include "pipeplan/rng.h"

namespace pipeplan {

namespace {

std::int64_t draw_length(const LengthDistribution& dist, Rng& rng) {
  switch (dist.family) {
    case LengthFamily::Lognormal: {
      double v = std::exp(dist.log_mean + dist.log_sigma * rng.next_normal());
      return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(v)));
    }
    case LengthFamily::Uniform:
      return rng.next_int(dist.uniform_lo, dist.uniform_hi);
    case LengthFamily::Mixture: {
      // Draw the branch first so both components consume a fixed number of
      // variates and the stream stays reproducible.
      bool lognormal = rng.next_uniform() < dist.lognormal_weight;
      LengthDistribution part = dist;
      part.family = lognormal ? LengthFamily::Lognormal : LengthFamily::Uniform;
      return draw_length(part, rng);
    }
  }
  throw std::invalid_argument("unknown synthetic length family");
}

std::vector<Sample> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.n <= 0) throw std::invalid_argument("synthetic dataset size must be >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(spec.n));
  Rng rng(seed);
  for (std::int64_t i = 0; i < spec.n; ++i) {
    Sample s;
    s.id = i;
    s.input_len = draw_length(spec.input, rng);
    s.target_len = spec.target ? draw_length(*spec.target, rng) : 0;
    out.push_back(s);
  }
  return out;
}

std::vector<Sample> load_record_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open dataset file: " + path);

  std::vector<Sample> out;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::int64_t line_start = offset;
    offset += static_cast<std::int64_t>(line.size()) + 1;
    if (line.empty() || line[0] == '#') continue;

    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("dataset record missing tab separator", line_no, line_start);
    std::int64_t input_len = 0;
    std::int64_t target_len = 0;
    try {
      std::size_t used = 0;
      input_len = std::stoll(line.substr(0, tab), &used);
      if (used != tab) throw std::invalid_argument("");
      std::string rest = line.substr(tab + 1);
      target_len = std::stoll(rest, &used);
      if (used != rest.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError("dataset record is not a pair of integers", line_no, line_start);
    }
    if (input_len < 1)
      throw ParseError("dataset record has input_len < 1", line_no, line_start);
    if (target_len < 0)
      throw ParseError("dataset record has target_len < 0", line_no, line_start);
    Sample s;
    s.id = static_cast<std::int64_t>(out.size());
    s.input_len = input_len;
    s.target_len = target_len;
    out.push_back(s);
  }
  return out;
}

}  // namespace

std::vector<Sample> load_dataset(const DatasetSpec& spec) {
  if (spec.max_seq_len < 1) throw std::invalid_argument("max_seq_len must be >= 1");

  std::vector<Sample> samples;
  if (spec.synthetic) {
    samples = generate_synthetic(*spec.synthetic, spec.seed);
  } else if (!spec.path.empty()) {
    samples = load_record_file(spec.path);
  } else {
    throw std::invalid_argument("dataset spec has neither a path nor a synthetic descriptor");
  }
  if (samples.empty()) throw std::invalid_argument("dataset is empty");

  for (auto& s : samples) {
    s.input_len = std::min(s.input_len, spec.max_seq_len);
    s.target_len = std::min(s.target_len, spec.max_seq_len);
  }
  return samples;
}

std::optional<MiniBatchDraw> draw_minibatch(const std::vector<Sample>& samples,
                                            std::int64_t token_budget, std::size_t cursor) {
  if (token_budget < 1) throw std::invalid_argument("token_budget must be >= 1");
  if (cursor >= samples.size()) return std::nullopt;

  MiniBatchDraw draw;
  draw.minibatch.token_budget = token_budget;
  std::int64_t total = 0;
  std::size_t i = cursor;
  while (i < samples.size()) {
    total += samples[i].total_tokens();
    draw.minibatch.samples.push_back(samples[i]);
    ++i;
    if (total >= token_budget) break;  // crossing sample stays in this mini-batch
  }
  draw.next_cursor = i;
  return draw;
}

}  // namespace pipeplan
