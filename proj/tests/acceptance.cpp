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

// End-to-end acceptance suite. Each criterion prints one PASS/FAIL line; the
// binary exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pipeplan/driver.h"
#include "pipeplan/errors.h"
#include "pipeplan/microbatch.h"
#include "pipeplan/planner.h"
#include "pipeplan/rng.h"
#include "pipeplan/simulate.h"

using namespace pipeplan;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void require(bool condition, const std::string& message) {
  if (!condition) throw std::runtime_error(message);
}

void criterion(int number, const std::string& name, const std::function<void()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body();
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[PASS] criterion %d: %s (%.1fs)\n", number, name.c_str(), sec);
  } catch (const std::exception& e) {
    ++g_failures;
    std::printf("[FAIL] criterion %d: %s: %s\n", number, name.c_str(), e.what());
  }
  std::fflush(stdout);
}

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

// ---------------------------------------------------------------------------
// Criterion 1: DP objective equals brute force over all consecutive
// partitions for 200 random toy instances with the exact candidate set.

void criterion_dp_oracle() {
  Rng rng(2024);
  int instances = 0;
  while (instances < 200) {
    const int n = static_cast<int>(rng.next_int(1, 12));
    std::vector<std::int64_t> lens;
    for (int i = 0; i < n; ++i) lens.push_back(rng.next_int(1, 64));
    std::vector<Sample> samples;
    for (int i = 0; i < n; ++i) samples.push_back({i, lens[static_cast<std::size_t>(i)], 0});
    auto cost = [&lens](std::size_t begin, std::size_t end) {
      std::int64_t max_len = 0;
      for (std::size_t k = begin; k < end; ++k) max_len = std::max(max_len, lens[k]);
      return SliceCost{static_cast<double>(max_len) * static_cast<double>(end - begin), 0.0};
    };
    for (int c : {1, 2, 4}) {
      for (int d : {1, 2}) {
        DpOptions opt;
        opt.stage_count = c;
        opt.replica_count = d;
        opt.t_max_interval = 0.0;  // exact candidate set
        const auto partition = dp_partition(samples, cost, opt);

        double best = std::numeric_limits<double>::infinity();
        for (std::uint64_t mask = 0; mask < (1ULL << (n - 1)); ++mask) {
          std::vector<double> times;
          std::size_t begin = 0;
          for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
            if (i + 1 == static_cast<std::size_t>(n) || ((mask >> i) & 1ULL)) {
              times.push_back(cost(begin, i + 1).time);
              begin = i + 1;
            }
          }
          best = std::min(best, eval_objective(times, c, d));
        }
        require(partition.objective_value == best,
                "objective " + std::to_string(partition.objective_value) + " != brute force " +
                    std::to_string(best) + " at n=" + std::to_string(n));
      }
    }
    ++instances;
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: simulated uniform 1F1B makespan equals the closed form.

void criterion_1f1b_closed_form() {
  const double t_f = 7.0, t_b = 9.0;
  for (int m : {1, 4, 8, 16}) {
    for (int c : {1, 2, 4, 8}) {
      const OpCostTable costs = OpCostTable::uniform(m, c, t_f, t_b, 1.0);
      PlanMeta meta;
      meta.hidden_dim = 16;
      meta.stage_layers.assign(static_cast<std::size_t>(c), {0, 1});
      meta.shape_table.assign(static_cast<std::size_t>(m), {1, 16, 0});
      const auto plan = plan_communication(schedule_1f1b(m, c), costs, meta);
      const auto report = simulate(plan, costs, SimConfig{});
      const double expect = (c - 1) * (t_f + t_b) + m * (t_f + t_b);
      require(!report.deadlock, "unexpected deadlock");
      require(report.makespan == expect,
              "makespan " + std::to_string(report.makespan) + " != " + std::to_string(expect) +
                  " at M=" + std::to_string(m) + " C=" + std::to_string(c));
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: qualitative reproduction of the makespan-vs-noise experiment.

void criterion_variation_sweep() {
  const std::vector<int> stage_counts = {4, 8, 16};
  const std::vector<double> sigmas = {0.0, 0.1, 0.2, 0.3};
  const auto rows = variation_sweep(16, stage_counts, sigmas, 200, 31337);

  auto find = [&](const std::string& sched, int c, double sigma) -> const SweepRow& {
    for (const auto& r : rows)
      if (r.scheduler == sched && r.stages == c && r.sigma == sigma) return r;
    throw std::runtime_error("missing sweep row");
  };

  for (int c : stage_counts) {
    double prev = 0.0;
    for (double sigma : sigmas) {
      const auto& row = find("1f1b", c, sigma);
      require(row.normalized >= prev,
              "1f1b normalized makespan not non-decreasing at C=" + std::to_string(c));
      prev = row.normalized;
    }
  }
  require(find("1f1b", 16, 0.3).normalized > find("1f1b", 4, 0.3).normalized,
          "1f1b degradation at C=16 not larger than at C=4");
  for (int c : stage_counts) {
    for (double sigma : {0.2, 0.3}) {
      const double adaptive = find("adaptive", c, sigma).mean_makespan;
      const double baseline = find("1f1b", c, sigma).mean_makespan;
      require(adaptive <= baseline, "adaptive mean makespan " + std::to_string(adaptive) +
                                        " > 1f1b " + std::to_string(baseline) + " at C=" +
                                        std::to_string(c) + " sigma=" + std::to_string(sigma));
    }
  }
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: 1000 randomized end-to-end plans are order-consistent,
// complete in the rendezvous simulator, and never reach a device limit.

void run_random_plan_suite(bool check_memory) {
  SyntheticGridParams params;
  const ProfileGrid grid = ProfileGrid::synthetic(params);
  Rng rng(550);

  for (int trial = 0; trial < 1000; ++trial) {
    const int c = static_cast<int>(rng.next_int(2, 8));
    const auto config = ModelConfig::uniform(c, 1, 64, false);
    const int n = static_cast<int>(rng.next_int(2, 24));
    MiniBatch minibatch;
    minibatch.token_budget = 1 << 20;
    for (int i = 0; i < n; ++i) minibatch.samples.push_back({i, rng.next_int(16, 2048), 0});

    const auto ordered = order_samples(minibatch, OrderMethod::Sort);
    DpOptions dp;
    dp.stage_count = c;
    dp.t_max_interval = 5.0;
    const auto partition =
        dp_partition(ordered, make_slice_cost(grid, config, ordered, Recompute::None), dp);

    std::vector<PaddedShape> shapes;
    for (const auto& mb : partition.micro_batches) shapes.push_back(mb.shape());
    const OpCostTable costs = OpCostTable::from_shapes(grid, config, shapes, Recompute::None);

    // Random limits above the single-micro-batch floor on every device.
    std::vector<double> limits(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
      double floor = 0.0;
      for (int mb = 0; mb < costs.micro_batches; ++mb) floor = std::max(floor, costs.act(mb, j));
      limits[static_cast<std::size_t>(j)] = floor * (1.01 + 3.0 * rng.next_uniform());
    }

    const auto sched =
        schedule_adaptive(costs, limits, identity_order(costs.micro_batches));
    PlanMeta meta;
    meta.iteration = trial;
    meta.hidden_dim = config.hidden_dim;
    meta.stage_layers = config.stages;
    for (const auto& mb : partition.micro_batches)
      meta.shape_table.push_back({mb.padded_mbs, mb.padded_input_len, mb.padded_target_len});
    const auto plan = plan_communication(sched, costs, meta);

    const auto consistency = verify_order_consistency(plan);
    require(consistency.ok, "order consistency failed: " + consistency.message);

    SimConfig cfg;
    cfg.noise_sigma = 0.3 * rng.next_uniform();
    cfg.seed = static_cast<std::uint64_t>(trial);
    cfg.comm_latency = rng.next_uniform() < 0.5 ? 0.0 : rng.next_uniform();
    const auto report = simulate(plan, costs, cfg);
    require(!report.deadlock, "plan deadlocked at trial " + std::to_string(trial));

    if (check_memory) {
      for (int j = 0; j < c; ++j)
        require(report.devices[static_cast<std::size_t>(j)].peak_mem <
                    limits[static_cast<std::size_t>(j)],
                "peak memory reached the limit on device " + std::to_string(j) + " at trial " +
                    std::to_string(trial));
    }
  }
}

void criterion_deadlock_suite() {
  run_random_plan_suite(false);

  // The crossed-sends pattern must be detected as a deadlock.
  ExecutionPlan plan;
  plan.stage_count = 2;
  plan.hidden_dim = 8;
  plan.stage_layers = {{0, 1}, {0, 1}};
  for (int i = 0; i < 8; ++i) plan.shape_table.push_back({1, 4, 0});
  plan.devices.resize(2);
  const TensorShape shape = boundary_shape(plan.shape_table[0], plan.hidden_dim, false);
  plan.devices[0] = {
      {InstrKind::ForwardPass, 0, -1, {}},     {InstrKind::SendActStart, 0, 1, shape},
      {InstrKind::WaitSendAct, 0, 1, shape},   {InstrKind::RecvGradStart, 7, 1, shape},
      {InstrKind::WaitRecvGrad, 7, 1, shape},  {InstrKind::BackwardPass, 7, -1, {}},
  };
  plan.devices[1] = {
      {InstrKind::SendGradStart, 7, 0, shape}, {InstrKind::WaitSendGrad, 7, 0, shape},
      {InstrKind::RecvActStart, 0, 0, shape},  {InstrKind::WaitRecvAct, 0, 0, shape},
      {InstrKind::ForwardPass, 0, -1, {}},     {InstrKind::BackwardPass, 7, -1, {}},
  };
  require(!verify_order_consistency(plan).ok, "crossed plan not flagged as inconsistent");
  const OpCostTable costs = OpCostTable::uniform(8, 2, 1.0, 1.0, 1.0);
  const auto report = simulate(plan, costs, SimConfig{});
  require(report.deadlock, "crossed plan did not deadlock");
  bool saw_act = false, saw_grad = false;
  for (const auto& w : report.witnesses) {
    if (w.instr.kind == InstrKind::SendActStart) saw_act = true;
    if (w.instr.kind == InstrKind::SendGradStart) saw_grad = true;
  }
  require(saw_act && saw_grad, "deadlock witnesses missing the blocked Starts");
}

void criterion_memory_soundness() { run_random_plan_suite(true); }

// ---------------------------------------------------------------------------
// Criterion 6: the two worked adaptive-schedule traces.

void criterion_hand_traces() {
  using Flat = std::vector<std::pair<char, int>>;
  {
    const auto costs = OpCostTable::uniform(2, 2, 1.0, 1.0, 1.0);
    const std::vector<double> limits = {100.0, 100.0};
    const auto sched = schedule_adaptive(costs, limits, identity_order(2));
    require(flat(sched.orders[0]) == Flat{{'F', 0}, {'F', 1}, {'B', 0}, {'B', 1}},
            "ample-memory trace: device 0 order differs");
    require(flat(sched.orders[1]) == Flat{{'F', 0}, {'B', 0}, {'F', 1}, {'B', 1}},
            "ample-memory trace: device 1 order differs");
    require(sched.cycles == 5, "ample-memory trace should take 5 cycles, took " +
                                   std::to_string(sched.cycles));
  }
  {
    const auto costs = OpCostTable::uniform(2, 2, 1.0, 1.0, 1.0);
    const std::vector<double> limits = {1.5, 100.0};
    const auto sched = schedule_adaptive(costs, limits, identity_order(2));
    require(flat(sched.orders[0]) == Flat{{'F', 0}, {'B', 0}, {'F', 1}, {'B', 1}},
            "memory-guard trace: device 0 order differs");
    require(sched.peak_mem[0] == 1.0, "memory-guard trace: peak memory should be 1");
  }
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8 share the heavy-tailed seeded dataset.

DatasetSpec heavy_tailed_spec(std::int64_t max_seq_len) {
  DatasetSpec spec;
  SyntheticSpec syn;
  syn.n = 3000;
  syn.input.family = LengthFamily::Mixture;
  syn.input.log_mean = 5.0;
  syn.input.log_sigma = 1.5;
  syn.input.uniform_lo = 2048;
  syn.input.uniform_hi = 8192;
  syn.input.lognormal_weight = 0.8;
  spec.synthetic = syn;
  spec.max_seq_len = max_seq_len;
  spec.seed = 7;
  return spec;
}

void criterion_padding_efficiency() {
  const auto samples = load_dataset(heavy_tailed_spec(2048));
  SyntheticGridParams params;
  const ProfileGrid grid = ProfileGrid::synthetic(params);
  const auto config = ModelConfig::uniform(4, 2, 1024, false);

  int iterations = 0;
  std::size_t cursor = 0;
  while (iterations < 25) {
    auto draw = draw_minibatch(samples, 65536, cursor);
    if (!draw) break;
    cursor = draw->next_cursor;
    ++iterations;

    const auto ordered = order_samples(draw->minibatch, OrderMethod::Sort);
    DpOptions dp;
    dp.stage_count = config.stage_count();
    dp.t_max_interval = 5.0;
    const auto partition =
        dp_partition(ordered, make_slice_cost(grid, config, ordered, Recompute::None), dp);
    const auto eff = padding_efficiency(partition);

    // Naive baseline: the whole mini-batch padded to its longest sample.
    std::int64_t actual = 0, longest = 0;
    for (const auto& s : draw->minibatch.samples) {
      actual += s.input_len;
      longest = std::max(longest, s.input_len);
    }
    const double naive =
        static_cast<double>(actual) /
        static_cast<double>(longest * static_cast<std::int64_t>(draw->minibatch.samples.size()));

    require(eff.input > 0.8, "iteration " + std::to_string(iterations - 1) +
                                 ": padding efficiency " + std::to_string(eff.input) + " <= 0.8");
    require(eff.input >= naive, "iteration " + std::to_string(iterations - 1) +
                                    ": DP efficiency below the naive baseline");
  }
  require(iterations >= 20, "dataset too small for 20 iterations");
}

void criterion_throughput_directionality() {
  const auto samples = load_dataset(heavy_tailed_spec(8192));
  SyntheticGridParams params;
  const ProfileGrid grid = ProfileGrid::synthetic(params);
  const auto config = ModelConfig::uniform(4, 2, 1024, false);

  PaddingReportOptions opt;
  opt.token_budget = 65536;
  opt.max_iterations = 20;
  const std::vector<std::int64_t> lens = {512, 8192};
  const auto rows = padding_vs_packing_report(samples, lens, grid, config, opt);

  auto proxy = [&](BatchingMethod method, std::int64_t len) {
    for (const auto& r : rows)
      if (r.method == method && r.max_seq_len == len) return r.throughput_proxy;
    throw std::runtime_error("missing padding report row");
  };
  const double dp_decline = (proxy(BatchingMethod::DpMicrobatch, 512) -
                             proxy(BatchingMethod::DpMicrobatch, 8192)) /
                            proxy(BatchingMethod::DpMicrobatch, 512);
  const double pack_decline =
      (proxy(BatchingMethod::Packing, 512) - proxy(BatchingMethod::Packing, 8192)) /
      proxy(BatchingMethod::Packing, 512);
  require(pack_decline > dp_decline,
          "packing decline " + std::to_string(pack_decline) + " not larger than DP decline " +
              std::to_string(dp_decline));
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical outputs across two planning runs.

void criterion_determinism() {
  const fs::path base = fs::temp_directory_path() / "pp_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path cfg_path = base / "config.json";
  {
    std::ofstream out(cfg_path);
    out << R"({
  "dataset": {
    "synthetic": {
      "n": 400,
      "input": {"family": "mixture", "log_mean": 5.0, "log_sigma": 1.5,
                 "uniform_lo": 1024, "uniform_hi": 2048, "lognormal_weight": 0.8}
    },
    "max_seq_len": 2048,
    "seed": 7
  },
  "token_budget": 32768,
  "stages": 4,
  "replicas": 2,
  "model": {"layers_per_stage": 2, "hidden_dim": 1024, "encoder_decoder": false},
  "grid": {"alpha": 0.4, "beta": 0.0002, "gamma": 0.02},
  "memory_limit": 40960.0,
  "policy": "adaptive",
  "ordering": "sort",
  "seed": 42,
  "workers": 2,
  "max_iterations": 5
})";
  }
  RunConfig cfg = load_run_config(cfg_path.string());
  std::ostringstream log;
  cfg.output_dir = (base / "run_a").string();
  require(run_plan(cfg, log) == 0, "first planning run failed");
  cfg.output_dir = (base / "run_b").string();
  require(run_plan(cfg, log) == 0, "second planning run failed");

  auto snapshot = [](const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
      std::ifstream in(entry.path(), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      out[entry.path().filename().string()] = ss.str();
    }
    return out;
  };
  const auto a = snapshot(base / "run_a");
  const auto b = snapshot(base / "run_b");
  require(!a.empty(), "no output files produced");
  require(a == b, "outputs differ between identical runs");
  fs::remove_all(base);
}

}  // namespace

int main() {
  criterion(1, "DP optimality oracle (200 instances, exact t_max set)", criterion_dp_oracle);
  criterion(2, "uniform 1F1B makespan closed form", criterion_1f1b_closed_form);
  criterion(3, "makespan-vs-noise sweep: 1F1B degrades, adaptive dominates",
            criterion_variation_sweep);
  criterion(4, "1000 random plans order-consistent and deadlock-free",
            criterion_deadlock_suite);
  criterion(5, "adaptive peak memory stays below every device limit",
            criterion_memory_soundness);
  criterion(6, "memory-aware schedule hand traces", criterion_hand_traces);
  criterion(7, "DP padding efficiency above 0.8 and naive baseline",
            criterion_padding_efficiency);
  criterion(8, "packing throughput declines faster with max length than DP",
            criterion_throughput_directionality);
  criterion(9, "byte-identical plan files and tables across runs", criterion_determinism);

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
