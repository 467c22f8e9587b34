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

#include "pipeplan/schedule.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pipeplan/errors.h"

namespace pipeplan {

PipelineSchedule schedule_1f1b(int micro_batches, int stages) {
  if (micro_batches < 1 || stages < 1)
    throw std::invalid_argument("1F1B needs at least one micro-batch and one stage");

  PipelineSchedule sched;
  sched.policy = SchedulePolicy::OneFOneB;
  sched.micro_batches = micro_batches;
  sched.stages = stages;
  sched.orders.resize(static_cast<std::size_t>(stages));
  sched.peak_mem.assign(static_cast<std::size_t>(stages), 0.0);

  for (int j = 0; j < stages; ++j) {
    auto& order = sched.orders[static_cast<std::size_t>(j)];
    const int warmup = std::min(stages - j, micro_batches);
    for (int i = 0; i < warmup; ++i) order.push_back({i, OpDir::Forward, 0});
    for (int b = 0; b < micro_batches; ++b) {
      order.push_back({b, OpDir::Backward, 0});
      const int f = warmup + b;
      if (f < micro_batches) order.push_back({f, OpDir::Forward, 0});
    }
    for (int k = 0; k < static_cast<int>(order.size()); ++k) order[static_cast<std::size_t>(k)].cycle = k;
  }
  sched.cycles = 2 * micro_batches;
  return sched;
}

PipelineSchedule schedule_adaptive(const OpCostTable& costs, std::span<const double> limits,
                                   std::span<const int> injection_order) {
  const int M = costs.micro_batches;
  const int C = costs.stages;
  if (M < 1 || C < 1) throw std::invalid_argument("adaptive schedule needs M >= 1, C >= 1");
  if (static_cast<int>(limits.size()) != C)
    throw std::invalid_argument("one memory limit per device required");
  if (static_cast<int>(injection_order.size()) != M)
    throw std::invalid_argument("injection order must be a permutation of the micro-batches");

  PipelineSchedule sched;
  sched.policy = SchedulePolicy::Adaptive;
  sched.micro_batches = M;
  sched.stages = C;
  sched.orders.resize(static_cast<std::size_t>(C));
  sched.peak_mem.assign(static_cast<std::size_t>(C), 0.0);

  std::vector<std::deque<int>> fwd(static_cast<std::size_t>(C));
  std::vector<std::deque<int>> bwd(static_cast<std::size_t>(C));
  std::vector<double> mem(static_cast<std::size_t>(C), 0.0);
  for (int mb : injection_order) fwd[0].push_back(mb);

  int scheduled = 0;
  const int total_ops = 2 * M * C;
  int cycle = 0;
  while (scheduled < total_ops) {
    if (cycle > 4 * M * C)
      throw std::logic_error("adaptive scheduler failed to converge; invariant violated");
    ++cycle;
    std::vector<std::vector<int>> new_fwd(static_cast<std::size_t>(C));
    std::vector<std::vector<int>> new_bwd(static_cast<std::size_t>(C));

    for (int j = 0; j < C; ++j) {
      auto& order = sched.orders[static_cast<std::size_t>(j)];
      if (!bwd[static_cast<std::size_t>(j)].empty()) {
        const int i = bwd[static_cast<std::size_t>(j)].front();
        bwd[static_cast<std::size_t>(j)].pop_front();
        mem[static_cast<std::size_t>(j)] -= costs.act(i, j);
        order.push_back({i, OpDir::Backward, cycle});
        ++scheduled;
        if (j > 0) new_bwd[static_cast<std::size_t>(j - 1)].push_back(i);
      }
      if (!fwd[static_cast<std::size_t>(j)].empty()) {
        const int i = fwd[static_cast<std::size_t>(j)].front();
        const double a = costs.act(i, j);
        if (mem[static_cast<std::size_t>(j)] + a < limits[static_cast<std::size_t>(j)]) {
          fwd[static_cast<std::size_t>(j)].pop_front();
          mem[static_cast<std::size_t>(j)] += a;
          sched.peak_mem[static_cast<std::size_t>(j)] =
              std::max(sched.peak_mem[static_cast<std::size_t>(j)], mem[static_cast<std::size_t>(j)]);
          order.push_back({i, OpDir::Forward, cycle});
          ++scheduled;
          if (j + 1 < C)
            new_fwd[static_cast<std::size_t>(j + 1)].push_back(i);
          else
            new_bwd[static_cast<std::size_t>(j)].push_back(i);  // last stage unlocks its own backward
        }
        // else: blocked by memory, stays at the buffer front for next cycle
      }
    }
    for (int j = 0; j < C; ++j) {
      for (int i : new_fwd[static_cast<std::size_t>(j)]) fwd[static_cast<std::size_t>(j)].push_back(i);
      for (int i : new_bwd[static_cast<std::size_t>(j)]) bwd[static_cast<std::size_t>(j)].push_back(i);
    }
  }
  sched.cycles = cycle;
  return sched;
}

std::vector<std::vector<OpTimes>> replay_schedule(const PipelineSchedule& schedule,
                                                  const OpCostTable& costs) {
  const int C = schedule.stages;
  const int M = schedule.micro_batches;
  const double inf = std::numeric_limits<double>::infinity();

  // end time per (mb, stage, dir); NaN marks "not executed yet".
  std::vector<double> fwd_end(static_cast<std::size_t>(M) * static_cast<std::size_t>(C),
                              std::numeric_limits<double>::quiet_NaN());
  std::vector<double> bwd_end(static_cast<std::size_t>(M) * static_cast<std::size_t>(C),
                              std::numeric_limits<double>::quiet_NaN());
  auto key = [C](int mb, int j) {
    return static_cast<std::size_t>(mb) * static_cast<std::size_t>(C) + static_cast<std::size_t>(j);
  };

  std::vector<std::vector<OpTimes>> times(static_cast<std::size_t>(C));
  for (int j = 0; j < C; ++j)
    times[static_cast<std::size_t>(j)].resize(schedule.orders[static_cast<std::size_t>(j)].size());

  std::vector<std::size_t> next(static_cast<std::size_t>(C), 0);
  std::vector<double> dev_free(static_cast<std::size_t>(C), 0.0);

  bool progressed = true;
  std::size_t remaining = 0;
  for (const auto& o : schedule.orders) remaining += o.size();
  while (remaining > 0) {
    if (!progressed)
      throw std::logic_error("schedule is not executable: circular dependency between devices");
    progressed = false;
    for (int j = 0; j < C; ++j) {
      auto& ptr = next[static_cast<std::size_t>(j)];
      const auto& order = schedule.orders[static_cast<std::size_t>(j)];
      while (ptr < order.size()) {
        const ScheduledOp& op = order[ptr];
        double ready;
        if (op.dir == OpDir::Forward) {
          ready = j == 0 ? -inf : fwd_end[key(op.microbatch, j - 1)];
        } else {
          ready = j == C - 1 ? fwd_end[key(op.microbatch, j)] : bwd_end[key(op.microbatch, j + 1)];
        }
        if (std::isnan(ready)) break;
        const double start = std::max(dev_free[static_cast<std::size_t>(j)], ready);
        const double dur =
            op.dir == OpDir::Forward ? costs.fwd(op.microbatch, j) : costs.bwd(op.microbatch, j);
        const double end = start + dur;
        times[static_cast<std::size_t>(j)][ptr] = {ready, start, end};
        (op.dir == OpDir::Forward ? fwd_end : bwd_end)[key(op.microbatch, j)] = end;
        dev_free[static_cast<std::size_t>(j)] = end;
        ++ptr;
        --remaining;
        progressed = true;
      }
    }
  }
  return times;
}

std::vector<StockSample> safety_stock_trace(const PipelineSchedule& schedule,
                                            const OpCostTable& costs) {
  auto times = replay_schedule(schedule, costs);
  std::vector<StockSample> trace;
  for (int j = 0; j < schedule.stages; ++j) {
    const auto& order = schedule.orders[static_cast<std::size_t>(j)];
    const auto& t = times[static_cast<std::size_t>(j)];
    for (std::size_t p = 0; p < order.size(); ++p) {
      StockSample s;
      s.device = j;
      s.op_index = static_cast<int>(p);
      s.microbatch = order[p].microbatch;
      s.dir = order[p].dir;
      s.start_time = t[p].start;
      // Buffered means ready strictly before this instant; an op whose
      // dependency lands exactly at its own start never sat in the buffer.
      int stock = 0;
      for (std::size_t q = p; q < order.size(); ++q)
        if (t[q].ready < t[p].start) ++stock;
      s.stock = stock;
      s.packed = p > 0 && t[p].start == t[p - 1].end;
      trace.push_back(s);
    }
  }
  return trace;
}

namespace {

// 1-D k-means with deterministic quantile seeding; returns clusters as
// ascending index lists, ordered by center.
std::vector<std::vector<int>> cluster_by_time(std::span<const double> values, int k) {
  const int n = static_cast<int>(values.size());
  std::vector<int> by_value(static_cast<std::size_t>(n));
  std::iota(by_value.begin(), by_value.end(), 0);
  std::sort(by_value.begin(), by_value.end(), [&](int a, int b) {
    return std::tie(values[static_cast<std::size_t>(a)], a) <
           std::tie(values[static_cast<std::size_t>(b)], b);
  });

  std::vector<double> centers(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const int pos = std::min(n - 1, (2 * c + 1) * n / (2 * k));
    centers[static_cast<std::size_t>(c)] = values[static_cast<std::size_t>(by_value[static_cast<std::size_t>(pos)])];
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::abs(values[static_cast<std::size_t>(i)] - centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = std::abs(values[static_cast<std::size_t>(i)] - centers[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best = c;
          best_d = d;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    std::vector<int> cnt(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sum[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += values[static_cast<std::size_t>(i)];
      ++cnt[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[static_cast<std::size_t>(c)] > 0)
        centers[static_cast<std::size_t>(c)] = sum[static_cast<std::size_t>(c)] / cnt[static_cast<std::size_t>(c)];
    if (!changed) break;
  }

  std::vector<std::vector<int>> clusters(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) clusters[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])].push_back(i);
  clusters.erase(std::remove_if(clusters.begin(), clusters.end(),
                                [](const auto& c) { return c.empty(); }),
                 clusters.end());
  auto min_value = [&](const std::vector<int>& c) {
    double v = values[static_cast<std::size_t>(c.front())];
    for (int i : c) v = std::min(v, values[static_cast<std::size_t>(i)]);
    return v;
  };
  std::sort(clusters.begin(), clusters.end(), [&](const auto& a, const auto& b) {
    const double ca = min_value(a);
    const double cb = min_value(b);
    return std::tie(ca, a.front()) < std::tie(cb, b.front());
  });
  return clusters;
}

}  // namespace

std::vector<int> order_microbatches(std::span<const double> predicted_times,
                                    const OpCostTable& costs, std::span<const double> limits,
                                    int n_clusters, const OrderEvaluator& evaluator) {
  const int M = static_cast<int>(predicted_times.size());
  if (M < 1) throw std::invalid_argument("need at least one micro-batch");
  if (M != costs.micro_batches)
    throw std::invalid_argument("predicted times and cost table disagree on micro-batch count");
  if (n_clusters < 1) throw std::invalid_argument("n_clusters must be >= 1");

  std::vector<std::vector<int>> clusters;
  if (M <= n_clusters) {
    for (int i = 0; i < M; ++i) clusters.push_back({i});
  } else {
    clusters = cluster_by_time(predicted_times, n_clusters);
  }

  std::vector<int> identity(static_cast<std::size_t>(M));
  std::iota(identity.begin(), identity.end(), 0);

  std::vector<std::size_t> perm(clusters.size());
  std::iota(perm.begin(), perm.end(), 0);

  std::vector<int> best_order;
  double best_makespan = std::numeric_limits<double>::infinity();
  bool best_is_identity = false;
  do {
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(M));
    for (std::size_t c : perm)
      order.insert(order.end(), clusters[c].begin(), clusters[c].end());
    PipelineSchedule sched = schedule_adaptive(costs, limits, order);
    const double makespan = evaluator(sched);
    const bool is_identity = order == identity;
    if (makespan < best_makespan || (makespan == best_makespan && is_identity && !best_is_identity)) {
      best_makespan = makespan;
      best_order = std::move(order);
      best_is_identity = is_identity;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_order;
}

RecomputeSelection select_recomputation(const ProfileGrid& grid, const ModelConfig& config,
                                        const MicroBatchPartition& partition,
                                        std::span<const double> limits,
                                        std::span<const Recompute> strategies) {
  if (strategies.empty()) throw std::invalid_argument("no recompute strategies to try");
  const int C = config.stage_count();
  if (static_cast<int>(limits.size()) != C)
    throw std::invalid_argument("one memory limit per device required");

  std::vector<PaddedShape> shapes;
  shapes.reserve(partition.micro_batches.size());
  for (const auto& mb : partition.micro_batches) shapes.push_back(mb.shape());

  // Canonical cheapest-compute-first order, filtered by the caller's set.
  std::vector<Recompute> tries;
  for (Recompute r : {Recompute::None, Recompute::Selective, Recompute::Full})
    if (std::find(strategies.begin(), strategies.end(), r) != strategies.end())
      tries.push_back(r);

  int violating_stage = -1;
  for (Recompute r : tries) {
    OpCostTable costs = OpCostTable::from_shapes(grid, config, shapes, r);
    bool fits = true;
    for (int j = 0; j < C && fits; ++j) {
      for (int mb = 0; mb < costs.micro_batches; ++mb) {
        if (costs.act(mb, j) >= limits[static_cast<std::size_t>(j)]) {
          fits = false;
          violating_stage = j;
          break;
        }
      }
    }
    if (!fits) continue;
    std::vector<int> identity(static_cast<std::size_t>(costs.micro_batches));
    std::iota(identity.begin(), identity.end(), 0);
    RecomputeSelection sel;
    sel.strategy = r;
    sel.schedule = schedule_adaptive(costs, limits, identity);
    sel.costs = std::move(costs);
    return sel;
  }
  throw InfeasibleError(
      "no recompute strategy fits the device memory limits (stage " +
          std::to_string(violating_stage) + ")",
      -1, violating_stage);
}

}  // namespace pipeplan
