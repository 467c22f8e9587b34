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

#include "pipeplan/microbatch.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "pipeplan/errors.h"

namespace pipeplan {

namespace {

std::int64_t l1_distance(const Sample& a, const Sample& b) {
  return std::llabs(a.input_len - b.input_len) + std::llabs(a.target_len - b.target_len);
}

std::vector<Sample> tsp_order(std::vector<Sample> points) {
  const std::size_t n = points.size();
  if (n <= 2) {
    std::sort(points.begin(), points.end(), [](const Sample& a, const Sample& b) {
      return std::tie(a.input_len, a.target_len, a.id) < std::tie(b.input_len, b.target_len, b.id);
    });
    return points;
  }

  // Nearest-neighbour construction from the lexicographically smallest point.
  std::vector<Sample> tour;
  tour.reserve(n);
  std::vector<bool> used(n, false);
  std::size_t current = 0;
  for (std::size_t i = 1; i < n; ++i) {
    auto key = [](const Sample& s) { return std::tie(s.input_len, s.target_len, s.id); };
    if (key(points[i]) < key(points[current])) current = i;
  }
  used[current] = true;
  tour.push_back(points[current]);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      if (best == n) {
        best = i;
        continue;
      }
      const std::int64_t di = l1_distance(tour.back(), points[i]);
      const std::int64_t db = l1_distance(tour.back(), points[best]);
      auto tie_i = std::tie(di, points[i].input_len, points[i].target_len, points[i].id);
      auto tie_b = std::tie(db, points[best].input_len, points[best].target_len, points[best].id);
      if (tie_i < tie_b) best = i;
    }
    used[best] = true;
    tour.push_back(points[best]);
  }

  // 2-opt on the open path: reverse [i, j] while it strictly shortens the
  // walk. Strict improvement guarantees termination.
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 1; i + 1 < n && !improved; ++i) {
      for (std::size_t j = i + 1; j < n && !improved; ++j) {
        std::int64_t before = l1_distance(tour[i - 1], tour[i]);
        std::int64_t after = l1_distance(tour[i - 1], tour[j]);
        if (j + 1 < n) {
          before += l1_distance(tour[j], tour[j + 1]);
          after += l1_distance(tour[i], tour[j + 1]);
        }
        if (after < before) {
          std::reverse(tour.begin() + static_cast<std::ptrdiff_t>(i),
                       tour.begin() + static_cast<std::ptrdiff_t>(j) + 1);
          improved = true;
        }
      }
    }
  }
  return tour;
}

}  // namespace

std::vector<Sample> order_samples(const MiniBatch& minibatch, OrderMethod method) {
  if (minibatch.samples.empty()) throw std::invalid_argument("mini-batch is empty");
  std::vector<Sample> out = minibatch.samples;
  if (method == OrderMethod::Sort) {
    std::sort(out.begin(), out.end(), [](const Sample& a, const Sample& b) {
      return std::tie(a.input_len, a.target_len, a.id) < std::tie(b.input_len, b.target_len, b.id);
    });
    return out;
  }
  return tsp_order(std::move(out));
}

double eval_objective(std::span<const double> times, int stage_count, int replica_count) {
  if (times.empty()) throw std::invalid_argument("objective needs at least one micro-batch");
  if (stage_count < 1 || replica_count < 1)
    throw std::invalid_argument("stage and replica counts must be >= 1");
  double max_t = 0.0;
  double sum = 0.0;
  for (double t : times) {
    max_t = std::max(max_t, t);
    sum += t;
  }
  return static_cast<double>(stage_count - 1) * max_t + sum / static_cast<double>(replica_count);
}

MicroBatch make_micro_batch(std::span<const Sample> ordered, std::size_t begin, std::size_t end) {
  MicroBatch mb;
  mb.padded_mbs = static_cast<std::int64_t>(end - begin);
  for (std::size_t k = begin; k < end; ++k) {
    const Sample& s = ordered[k];
    mb.sample_ids.push_back(s.id);
    mb.padded_input_len = std::max(mb.padded_input_len, s.input_len);
    mb.padded_target_len = std::max(mb.padded_target_len, s.target_len);
    mb.input_tokens += s.input_len;
    mb.target_tokens += s.target_len;
  }
  return mb;
}

SliceCostFn make_slice_cost(const ProfileGrid& grid, const ModelConfig& config,
                            std::span<const Sample> ordered, Recompute r) {
  std::vector<Sample> samples(ordered.begin(), ordered.end());
  return [&grid, config, samples = std::move(samples), r](std::size_t begin,
                                                          std::size_t end) -> SliceCost {
    PaddedShape shape;
    shape.mbs = static_cast<std::int64_t>(end - begin);
    shape.input_len = 0;
    shape.target_len = 0;
    for (std::size_t k = begin; k < end; ++k) {
      shape.input_len = std::max(shape.input_len, samples[k].input_len);
      shape.target_len = std::max(shape.target_len, samples[k].target_len);
    }
    SliceCost cost;
    for (int j = 0; j < config.stage_count(); ++j) {
      CostEstimate est =
          estimate(grid, config, j, shape.mbs, shape.input_len, shape.target_len, r);
      cost.time = std::max(cost.time, est.t_f + est.t_b);
      cost.act_mem = std::max(cost.act_mem, est.act_mem);
    }
    return cost;
  };
}

namespace {

struct SuffixState {
  double sum = std::numeric_limits<double>::infinity();
  std::int32_t count = 0;
};

// Suffix DP for one t_max candidate over precomputed triangular slice tables.
// Returns whether a feasible partition exists; fills (sum, count) per suffix.
bool run_suffix_dp(std::size_t n, const std::vector<double>& slice_time,
                   const std::vector<double>& slice_mem,
                   const std::vector<std::size_t>& row_offset, double t_max, double mem_cap,
                   std::vector<SuffixState>& state) {
  state.assign(n + 1, SuffixState{});
  state[n] = {0.0, 0};
  for (std::size_t i = n; i-- > 0;) {
    SuffixState best;
    for (std::size_t j = i + 1; j <= n; ++j) {
      const std::size_t idx = row_offset[i] + (j - i - 1);
      if (slice_mem[idx] > mem_cap || slice_time[idx] > t_max) continue;
      const SuffixState& next = state[j];
      if (!std::isfinite(next.sum)) continue;
      const double sum = slice_time[idx] + next.sum;
      const std::int32_t count = 1 + next.count;
      if (sum < best.sum || (sum == best.sum && count < best.count)) best = {sum, count};
    }
    state[i] = best;
  }
  return std::isfinite(state[0].sum);
}

// Front-to-back reconstruction picking the smallest feasible boundary that
// attains the optimum at each step, which yields the lexicographically
// earliest split points among (sum, count)-optimal partitions.
std::vector<std::size_t> reconstruct_splits(std::size_t n, const std::vector<double>& slice_time,
                                            const std::vector<double>& slice_mem,
                                            const std::vector<std::size_t>& row_offset,
                                            double t_max, double mem_cap,
                                            const std::vector<SuffixState>& state) {
  std::vector<std::size_t> splits;
  std::size_t i = 0;
  while (i < n) {
    for (std::size_t j = i + 1; j <= n; ++j) {
      const std::size_t idx = row_offset[i] + (j - i - 1);
      if (slice_mem[idx] > mem_cap || slice_time[idx] > t_max) continue;
      if (!std::isfinite(state[j].sum)) continue;
      if (slice_time[idx] + state[j].sum == state[i].sum &&
          1 + state[j].count == state[i].count) {
        splits.push_back(j);
        i = j;
        break;
      }
    }
  }
  return splits;
}

}  // namespace

MicroBatchPartition dp_partition(std::span<const Sample> ordered, const SliceCostFn& cost,
                                 const DpOptions& options) {
  const std::size_t n = ordered.size();
  if (n == 0) throw std::invalid_argument("cannot partition an empty sample list");
  if (options.stage_count < 1 || options.replica_count < 1)
    throw std::invalid_argument("stage and replica counts must be >= 1");
  if (options.t_max_interval < 0)
    throw std::invalid_argument("t_max_interval must be >= 0");

  // Triangular slice tables: row i holds slices [i, j) for j in (i, n].
  std::vector<std::size_t> row_offset(n);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    row_offset[i] = total;
    total += n - i;
  }
  std::vector<double> slice_time(total);
  std::vector<double> slice_mem(total);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j <= n; ++j) {
      SliceCost c = cost(i, j);
      slice_time[row_offset[i] + (j - i - 1)] = c.time;
      slice_mem[row_offset[i] + (j - i - 1)] = c.act_mem;
    }
  }

  const double cap = options.per_mb_mem_cap;
  for (std::size_t k = 0; k < n; ++k) {
    if (slice_mem[row_offset[k]] > cap)
      throw InfeasibleError("sample " + std::to_string(ordered[k].id) +
                                " does not fit the per-micro-batch memory cap alone",
                            ordered[k].id, -1);
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> candidates;
  if (options.stage_count == 1) {
    // The ramp term vanishes; a single unconstrained pass is optimal.
    candidates.push_back(inf);
  } else {
    candidates.reserve(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
      if (slice_mem[idx] > cap) continue;
      double t = slice_time[idx];
      if (options.t_max_interval > 0)
        t = std::ceil(t / options.t_max_interval) * options.t_max_interval;
      candidates.push_back(t);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  }

  // Lower bound on any candidate's sum term: the cap-only optimum. Once the
  // ramp term alone exceeds the best objective minus this bound, no larger
  // candidate can win.
  std::vector<SuffixState> state;
  double min_sum_bound = 0.0;
  if (options.stage_count > 1) {
    run_suffix_dp(n, slice_time, slice_mem, row_offset, inf, cap, state);
    min_sum_bound = state[0].sum / static_cast<double>(options.replica_count);
  }

  struct Best {
    double objective = std::numeric_limits<double>::infinity();
    std::int32_t count = 0;
    std::vector<std::size_t> splits;
    double t_max = 0.0;
    bool valid = false;
  } best;

  const double ramp = static_cast<double>(options.stage_count - 1);
  for (double t_max : candidates) {
    if (best.valid && ramp * t_max + min_sum_bound > best.objective) break;
    if (!run_suffix_dp(n, slice_time, slice_mem, row_offset, t_max, cap, state)) continue;
    const double obj = (options.stage_count > 1 ? ramp * t_max : 0.0) +
                       state[0].sum / static_cast<double>(options.replica_count);
    bool take = false;
    if (!best.valid || obj < best.objective) {
      take = true;
    } else if (obj == best.objective) {
      if (state[0].count < best.count) {
        take = true;
      } else if (state[0].count == best.count) {
        auto splits =
            reconstruct_splits(n, slice_time, slice_mem, row_offset, t_max, cap, state);
        if (splits < best.splits) {
          best.splits = std::move(splits);
          best.t_max = t_max;
          continue;
        }
      }
    }
    if (take) {
      best.objective = obj;
      best.count = state[0].count;
      best.splits = reconstruct_splits(n, slice_time, slice_mem, row_offset, t_max, cap, state);
      best.t_max = t_max;
      best.valid = true;
    }
  }
  if (!best.valid)
    throw InfeasibleError("no feasible partition under the memory cap", -1, -1);

  MicroBatchPartition partition;
  std::vector<double> times;
  std::size_t begin = 0;
  double realized_max = 0.0;
  for (std::size_t split : best.splits) {
    partition.micro_batches.push_back(make_micro_batch(ordered, begin, split));
    const double t = slice_time[row_offset[begin] + (split - begin - 1)];
    times.push_back(t);
    realized_max = std::max(realized_max, t);
    begin = split;
  }
  partition.objective_value =
      eval_objective(times, options.stage_count, options.replica_count);
  partition.t_max_used = std::isfinite(best.t_max) ? best.t_max : realized_max;

  const int m = static_cast<int>(partition.micro_batches.size());
  if (m >= options.replica_count) {
    partition.replica_assignment = balance_replicas(times, options.replica_count);
  } else {
    partition.replica_assignment.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) partition.replica_assignment[static_cast<std::size_t>(i)] = i;
  }
  std::vector<double> replica_load(static_cast<std::size_t>(options.replica_count), 0.0);
  for (int i = 0; i < m; ++i)
    replica_load[static_cast<std::size_t>(partition.replica_assignment[static_cast<std::size_t>(i)])] +=
        times[static_cast<std::size_t>(i)];
  partition.max_replica_load = *std::max_element(replica_load.begin(), replica_load.end());
  return partition;
}

std::vector<int> balance_replicas(std::span<const double> times, int replica_count) {
  const std::size_t m = times.size();
  if (replica_count < 1) throw std::invalid_argument("replica count must be >= 1");
  if (m < static_cast<std::size_t>(replica_count))
    throw std::invalid_argument("need at least as many micro-batches as replicas");
  if (replica_count == 1) return std::vector<int>(m, 0);

  // Largest-differencing method: every entry is a k-way split with sorted
  // subset sums; repeatedly merge the two entries with the largest internal
  // spread, pairing the heaviest subsets of one with the lightest of the
  // other.
  struct Entry {
    std::vector<double> sums;                  // descending
    std::vector<std::vector<int>> groups;      // aligned with sums
    double spread = 0.0;
    int min_index = 0;
    std::uint64_t seq = 0;
  };
  struct Order {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.spread != b.spread) return a.spread > b.spread;
      if (a.min_index != b.min_index) return a.min_index < b.min_index;
      return a.seq < b.seq;
    }
  };

  std::multiset<Entry, Order> queue;
  const std::size_t k = static_cast<std::size_t>(replica_count);
  for (std::size_t i = 0; i < m; ++i) {
    Entry e;
    e.sums.assign(k, 0.0);
    e.groups.assign(k, {});
    e.sums[0] = times[i];
    e.groups[0] = {static_cast<int>(i)};
    e.spread = times[i];
    e.min_index = static_cast<int>(i);
    e.seq = i;
    queue.insert(std::move(e));
  }

  std::uint64_t next_seq = m;
  while (queue.size() > 1) {
    Entry a = *queue.begin();
    queue.erase(queue.begin());
    Entry b = *queue.begin();
    queue.erase(queue.begin());

    Entry merged;
    merged.sums.resize(k);
    merged.groups.resize(k);
    std::vector<std::pair<double, std::vector<int>>> combined(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t rev = k - 1 - i;
      combined[i].first = a.sums[i] + b.sums[rev];
      combined[i].second = a.groups[i];
      combined[i].second.insert(combined[i].second.end(), b.groups[rev].begin(),
                                b.groups[rev].end());
    }
    std::stable_sort(combined.begin(), combined.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    merged.min_index = std::min(a.min_index, b.min_index);
    merged.seq = next_seq++;
    for (std::size_t i = 0; i < k; ++i) {
      merged.sums[i] = combined[i].first;
      merged.groups[i] = std::move(combined[i].second);
    }
    merged.spread = merged.sums.front() - merged.sums.back();
    queue.insert(std::move(merged));
  }

  Entry final = *queue.begin();
  // Deterministic replica ids: order groups by their smallest micro-batch.
  std::vector<std::size_t> group_order(k);
  for (std::size_t i = 0; i < k; ++i) group_order[i] = i;
  auto group_key = [&](std::size_t g) {
    return final.groups[g].empty() ? static_cast<int>(m) + static_cast<int>(g)
                                   : *std::min_element(final.groups[g].begin(),
                                                       final.groups[g].end());
  };
  std::sort(group_order.begin(), group_order.end(),
            [&](std::size_t x, std::size_t y) { return group_key(x) < group_key(y); });

  std::vector<int> assignment(m, 0);
  for (std::size_t r = 0; r < k; ++r)
    for (int mb : final.groups[group_order[r]])
      assignment[static_cast<std::size_t>(mb)] = static_cast<int>(r);
  return assignment;
}

PaddingEfficiency padding_efficiency(const MicroBatchPartition& partition) {
  if (partition.micro_batches.empty())
    throw std::invalid_argument("padding efficiency of an empty partition");
  std::int64_t input_actual = 0, input_padded = 0;
  std::int64_t target_actual = 0, target_padded = 0;
  for (const auto& mb : partition.micro_batches) {
    input_actual += mb.input_tokens;
    input_padded += mb.padded_mbs * mb.padded_input_len;
    target_actual += mb.target_tokens;
    target_padded += mb.padded_mbs * mb.padded_target_len;
  }
  PaddingEfficiency eff;
  eff.input = input_padded == 0
                  ? 1.0
                  : static_cast<double>(input_actual) / static_cast<double>(input_padded);
  eff.target = target_padded == 0
                   ? 1.0
                   : static_cast<double>(target_actual) / static_cast<double>(target_padded);
  return eff;
}

}  // namespace pipeplan
