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
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "pipeplan/errors.h"
#include "pipeplan/rng.h"
#include "pipeplan/schedule.h"

using namespace pipeplan;

namespace {

std::vector<std::pair<char, int>> flat(const std::vector<ScheduledOp>& order) {
  std::vector<std::pair<char, int>> out;
  for (const auto& op : order)
    out.emplace_back(op.dir == OpDir::Forward ? 'F' : 'B', op.microbatch);
  return out;
}

std::vector<int> identity_order(int m) {
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

// Cross-stage dependency and completeness checks via the timed replay.
void check_schedule_sound(const PipelineSchedule& sched, const OpCostTable& costs) {
  const auto times = replay_schedule(sched, costs);
  std::map<std::tuple<int, int, int>, double> start, end;
  for (int j = 0; j < sched.stages; ++j) {
    const auto& order = sched.orders[static_cast<std::size_t>(j)];
    REQUIRE(order.size() == times[static_cast<std::size_t>(j)].size());
    for (std::size_t p = 0; p < order.size(); ++p) {
      const auto key = std::make_tuple(order[p].microbatch, j, order[p].dir == OpDir::Forward);
      REQUIRE(start.find(key) == start.end());  // each op exactly once
      start[key] = times[static_cast<std::size_t>(j)][p].start;
      end[key] = times[static_cast<std::size_t>(j)][p].end;
    }
  }
  REQUIRE(start.size() ==
          static_cast<std::size_t>(2 * sched.micro_batches * sched.stages));
  for (int i = 0; i < sched.micro_batches; ++i) {
    for (int j = 0; j + 1 < sched.stages; ++j) {
      CHECK(end.at({i, j, 1}) <= start.at({i, j + 1, 1}));      // F(i,j) before F(i,j+1)
      CHECK(end.at({i, j + 1, 0}) <= start.at({i, j, 0}));      // B(i,j+1) before B(i,j)
    }
    const int last = sched.stages - 1;
    CHECK(end.at({i, last, 1}) <= start.at({i, last, 0}));      // F before B on last stage
  }
}

}  // namespace

TEST_CASE("1f1b degenerates to strict alternation on one stage") {
  auto sched = schedule_1f1b(4, 1);
  CHECK(flat(sched.orders[0]) ==
        std::vector<std::pair<char, int>>{
            {'F', 0}, {'B', 0}, {'F', 1}, {'B', 1}, {'F', 2}, {'B', 2}, {'F', 3}, {'B', 3}});
}

TEST_CASE("1f1b hand construction for two micro-batches on two stages") {
  auto sched = schedule_1f1b(2, 2);
  CHECK(flat(sched.orders[0]) ==
        std::vector<std::pair<char, int>>{{'F', 0}, {'F', 1}, {'B', 0}, {'B', 1}});
  CHECK(flat(sched.orders[1]) ==
        std::vector<std::pair<char, int>>{{'F', 0}, {'B', 0}, {'F', 1}, {'B', 1}});
}

TEST_CASE("one micro-batch runs [F, B] on every stage") {
  for (int c : {1, 2, 5}) {
    auto sched = schedule_1f1b(1, c);
    for (int j = 0; j < c; ++j)
      CHECK(flat(sched.orders[static_cast<std::size_t>(j)]) ==
            std::vector<std::pair<char, int>>{{'F', 0}, {'B', 0}});
  }
}

TEST_CASE("adaptive hand trace: two micro-batches, two stages, ample memory") {
  auto costs = OpCostTable::uniform(2, 2, 1.0, 1.0, 1.0);
  const std::vector<double> limits = {100.0, 100.0};
  auto sched = schedule_adaptive(costs, limits, identity_order(2));
  CHECK(flat(sched.orders[0]) ==
        std::vector<std::pair<char, int>>{{'F', 0}, {'F', 1}, {'B', 0}, {'B', 1}});
  CHECK(flat(sched.orders[1]) ==
        std::vector<std::pair<char, int>>{{'F', 0}, {'B', 0}, {'F', 1}, {'B', 1}});
  CHECK(sched.cycles == 5);
}

TEST_CASE("adaptive hand trace: the memory guard delays the second forward") {
  auto costs = OpCostTable::uniform(2, 2, 1.0, 1.0, 1.0);
  const std::vector<double> limits = {1.5, 100.0};
  auto sched = schedule_adaptive(costs, limits, identity_order(2));
  CHECK(flat(sched.orders[0]) ==
        std::vector<std::pair<char, int>>{{'F', 0}, {'B', 0}, {'F', 1}, {'B', 1}});
  CHECK(sched.peak_mem[0] == doctest::Approx(1.0));
}

TEST_CASE("adaptive equals 1f1b for a single micro-batch") {
  for (int c : {1, 3, 6}) {
    auto costs = OpCostTable::uniform(1, c, 2.0, 3.0, 1.0);
    std::vector<double> limits(static_cast<std::size_t>(c), 10.0);
    auto adaptive = schedule_adaptive(costs, limits, identity_order(1));
    auto baseline = schedule_1f1b(1, c);
    for (int j = 0; j < c; ++j)
      CHECK(flat(adaptive.orders[static_cast<std::size_t>(j)]) ==
            flat(baseline.orders[static_cast<std::size_t>(j)]));
  }
}

TEST_CASE("both schedulers are dependency-sound and complete on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    const int m = static_cast<int>(rng.next_int(1, 12));
    const int c = static_cast<int>(rng.next_int(1, 6));
    OpCostTable costs = OpCostTable::uniform(m, c, 0.0, 0.0, 1.0);
    for (auto& v : costs.t_f) v = 1.0 + rng.next_uniform() * 9.0;
    for (auto& v : costs.t_b) v = 1.0 + rng.next_uniform() * 9.0;

    check_schedule_sound(schedule_1f1b(m, c), costs);

    std::vector<double> limits(static_cast<std::size_t>(c));
    for (auto& l : limits) l = 1.5 + rng.next_uniform() * static_cast<double>(m);
    check_schedule_sound(schedule_adaptive(costs, limits, identity_order(m)), costs);
  }
}

TEST_CASE("adaptive never admits a forward that reaches the device limit") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const int m = static_cast<int>(rng.next_int(2, 14));
    const int c = static_cast<int>(rng.next_int(1, 5));
    OpCostTable costs = OpCostTable::uniform(m, c, 1.0, 1.0, 0.0);
    double max_act = 0.0;
    for (auto& a : costs.act_mem) {
      a = 0.5 + rng.next_uniform() * 2.0;
      max_act = std::max(max_act, a);
    }
    std::vector<double> limits(static_cast<std::size_t>(c));
    for (auto& l : limits) l = max_act + 0.1 + rng.next_uniform() * 3.0;

    auto sched = schedule_adaptive(costs, limits, identity_order(m));
    for (int j = 0; j < c; ++j) {
      double mem = 0.0;
      for (const auto& op : sched.orders[static_cast<std::size_t>(j)]) {
        if (op.dir == OpDir::Forward) {
          CHECK(mem + costs.act(op.microbatch, j) < limits[static_cast<std::size_t>(j)]);
          mem += costs.act(op.microbatch, j);
        } else {
          mem -= costs.act(op.microbatch, j);
        }
      }
      CHECK(mem == doctest::Approx(0.0));
      CHECK(sched.peak_mem[static_cast<std::size_t>(j)] <
            limits[static_cast<std::size_t>(j)]);
    }
  }
}

TEST_CASE("a micro-batch that can never fit trips the cycle guard") {
  auto costs = OpCostTable::uniform(1, 1, 1.0, 1.0, 5.0);
  const std::vector<double> limits = {1.0};
  CHECK_THROWS_AS(schedule_adaptive(costs, limits, identity_order(1)), std::logic_error);
}

TEST_CASE("1f1b steady state has zero safety stock beyond the first stage") {
  const int M = 8, C = 4;
  auto costs = OpCostTable::uniform(M, C, 1.0, 1.0, 1.0);
  auto trace = safety_stock_trace(schedule_1f1b(M, C), costs);

  // Steady state: strictly after the device's second backward, up to its last
  // forward (the fill phase of a pipeline leaks early arrivals; the drain has
  // no forwards left).
  std::map<int, std::vector<StockSample>> per_device;
  for (const auto& s : trace) per_device[s.device].push_back(s);
  for (int j = 1; j < C; ++j) {
    const auto& ops = per_device[j];
    int backwards_seen = 0;
    std::size_t window_begin = 0, window_end = 0;
    for (std::size_t p = 0; p < ops.size(); ++p) {
      if (ops[p].dir == OpDir::Backward && ++backwards_seen == 2) window_begin = p + 1;
      if (ops[p].dir == OpDir::Forward) window_end = p + 1;
    }
    REQUIRE(window_begin < window_end);
    for (std::size_t p = window_begin; p < window_end; ++p) {
      CHECK(ops[p].packed);
      CHECK(ops[p].stock == 0);
    }
  }
}

TEST_CASE("front-loaded adaptive injection keeps one safety stock in steady state") {
  const int M = 8, C = 4;
  auto costs = OpCostTable::uniform(M, C, 1.0, 1.0, 1.0);
  // Limit stage 0 to 7 in-flight activations: 7 micro-batches inject up
  // front, the 8th right after the first backward.
  std::vector<double> limits(static_cast<std::size_t>(C), 1e18);
  limits[0] = 7.5;
  auto sched = schedule_adaptive(costs, limits, identity_order(M));
  CHECK(flat(sched.orders[0]).at(7) == std::pair<char, int>{'B', 0});

  auto trace = safety_stock_trace(sched, costs);
  std::map<int, std::vector<StockSample>> per_device;
  for (const auto& s : trace) per_device[s.device].push_back(s);
  for (int j = 0; j < C; ++j) {
    const auto& ops = per_device[j];
    std::size_t window_begin = 0, window_end = 0;
    for (std::size_t p = 0; p < ops.size(); ++p) {
      if (ops[p].dir == OpDir::Backward && window_begin == 0) window_begin = p + 1;
      if (ops[p].dir == OpDir::Forward) window_end = p + 1;
    }
    REQUIRE(window_begin < window_end);
    for (std::size_t p = window_begin; p < window_end; ++p) CHECK(ops[p].stock >= 1);
  }
}

TEST_CASE("a single stage drains its pre-loaded stock monotonically") {
  const int M = 5;
  auto costs = OpCostTable::uniform(M, 1, 1.0, 1.0, 1.0);
  auto trace = safety_stock_trace(schedule_1f1b(M, 1), costs);
  int started_forwards = 0;
  int last_forward_stock = M + 1;
  for (const auto& s : trace) {
    CHECK(s.stock == M - started_forwards);  // remaining un-started micro-batches
    if (s.dir == OpDir::Forward) {
      CHECK(s.stock < last_forward_stock);
      last_forward_stock = s.stock;
      ++started_forwards;
    }
  }
}

TEST_CASE("order_microbatches returns identity when all times tie") {
  const int M = 6;
  auto costs = OpCostTable::uniform(M, 2, 3.0, 3.0, 1.0);
  std::vector<double> times(M, 6.0);
  const std::vector<double> limits = {100.0, 100.0};
  auto evaluator = [&](const PipelineSchedule& sched) {
    const auto t = replay_schedule(sched, costs);
    double makespan = 0.0;
    for (const auto& dev : t)
      for (const auto& op : dev) makespan = std::max(makespan, op.end);
    return makespan;
  };
  CHECK(order_microbatches(times, costs, limits, 3, evaluator) == identity_order(M));
}

TEST_CASE("small partitions enumerate every full permutation") {
  const int M = 3;
  auto costs = OpCostTable::uniform(M, 1, 1.0, 1.0, 1.0);
  std::vector<double> times = {1.0, 5.0, 9.0};
  const std::vector<double> limits = {100.0};
  std::set<std::vector<int>> seen;
  auto evaluator = [&](const PipelineSchedule& sched) {
    std::vector<int> order;
    for (const auto& op : sched.orders[0])
      if (op.dir == OpDir::Forward) order.push_back(op.microbatch);
    seen.insert(order);
    return 1.0;
  };
  order_microbatches(times, costs, limits, 3, evaluator);
  CHECK(seen.size() == 6);  // 3! full permutations
}

TEST_CASE("injection-order search never loses to the identity order") {
  const int M = 8, C = 4;
  OpCostTable costs = OpCostTable::uniform(M, C, 1.0, 1.0, 1.0);
  // Seven short micro-batches and one long straggler at the end.
  for (int j = 0; j < C; ++j) {
    costs.t_f[costs.idx(7, j)] = 6.0;
    costs.t_b[costs.idx(7, j)] = 6.0;
  }
  std::vector<double> limits(static_cast<std::size_t>(C), 1e18);
  std::vector<double> times(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) times[static_cast<std::size_t>(i)] = costs.scalar_time(i);

  auto makespan_of = [&](const PipelineSchedule& sched) {
    const auto t = replay_schedule(sched, costs);
    double makespan = 0.0;
    for (const auto& dev : t)
      for (const auto& op : dev) makespan = std::max(makespan, op.end);
    return makespan;
  };
  auto best = order_microbatches(times, costs, limits, 2, makespan_of);
  const double best_makespan =
      makespan_of(schedule_adaptive(costs, limits, best));
  const double identity_makespan =
      makespan_of(schedule_adaptive(costs, limits, identity_order(M)));
  CHECK(best_makespan <= identity_makespan);
}

TEST_CASE("select_recomputation picks the cheapest strategy that fits") {
  SyntheticGridParams p;
  p.alpha = 1.0;
  p.beta = 0.0;
  p.gamma = 0.01;
  auto grid = ProfileGrid::synthetic(p, {1, 2, 4, 8}, {32, 64, 128, 256});
  auto config = ModelConfig::uniform(2, 1, 64, false);

  std::vector<Sample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back({i, 128, 0});
  MicroBatchPartition partition;
  partition.micro_batches.push_back(make_micro_batch(samples, 0, 4));
  partition.replica_assignment = {0};

  // act per stage: none 5.12, selective 3.072, full 1.024
  const std::vector<Recompute> all = {Recompute::None, Recompute::Selective, Recompute::Full};

  std::vector<double> generous = {100.0, 100.0};
  CHECK(select_recomputation(grid, config, partition, generous, all).strategy ==
        Recompute::None);

  std::vector<double> mid = {4.0, 4.0};
  CHECK(select_recomputation(grid, config, partition, mid, all).strategy ==
        Recompute::Selective);

  std::vector<double> tight = {2.0, 2.0};
  CHECK(select_recomputation(grid, config, partition, tight, all).strategy == Recompute::Full);

  std::vector<double> impossible = {0.5, 0.5};
  try {
    select_recomputation(grid, config, partition, impossible, all);
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(e.stage() == 0);
  }
}
