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
#include <span>
#include <string>
#include <vector>

#include "pipeplan/comm_plan.h"
#include "pipeplan/cost_model.h"
#include "pipeplan/microbatch.h"
#include "pipeplan/workload.h"

namespace pipeplan {

struct SimConfig {
  double noise_sigma = 0.0;   // stddev as a fraction of the mean op duration
  std::uint64_t seed = 0;
  double comm_latency = 0.0;  // time units per transfer
  int trial_count = 1;
};

struct DeviceStats {
  double busy = 0.0;
  double idle = 0.0;
  double blocked = 0.0;
  double peak_mem = 0.0;
  double final_mem = 0.0;  // ledger after the last instruction; 0 when complete
};

struct BlockedWitness {
  int device = 0;
  long instr_index = 0;
  Instruction instr;
};

struct TransferRecord {
  int from = 0;
  int to = 0;
  bool act = false;
  int microbatch = 0;
  double start = 0.0;
  double end = 0.0;
};

struct SimReport {
  double makespan = 0.0;
  std::vector<DeviceStats> devices;
  double bubble_ratio = 0.0;  // non-busy device time over C * makespan
  bool deadlock = false;
  std::vector<BlockedWitness> witnesses;
  std::vector<TransferRecord> transfers;
};

/// Executes the plan: each device walks its instruction list on a computation
/// stream; Start ops post transfers onto per-(device pair, direction)
/// rendezvous channels that complete one transfer at a time once both
/// endpoints posted; Wait ops block until the referenced transfer completed.
/// Compute durations come from `costs`, perturbed by seeded zero-mean
/// Gaussian noise (truncated positive). A global step with no runnable
/// instruction reports a deadlock with the blocked Waits and their Starts as
/// witnesses.
SimReport simulate(const ExecutionPlan& plan, const OpCostTable& costs, const SimConfig& cfg);

struct SweepRow {
  std::string scheduler;
  int stages = 0;
  double sigma = 0.0;
  double mean_makespan = 0.0;
  double normalized = 0.0;  // mean makespan / same scheduler's sigma=0 makespan
};

/// Uniform-cost micro-batches through both schedulers under growing execution
/// time noise; one row per (scheduler, stage count, sigma).
std::vector<SweepRow> variation_sweep(int micro_batches, std::span<const int> stage_counts,
                                      std::span<const double> sigmas, int trials,
                                      std::uint64_t seed, double t_f = 10.0, double t_b = 10.0);

enum class BatchingMethod { DpMicrobatch, Packing, NaivePadding };

const char* to_string(BatchingMethod method);

struct PaddingRow {
  BatchingMethod method = BatchingMethod::DpMicrobatch;
  std::int64_t max_seq_len = 0;
  double padding_eff_input = 1.0;
  double padding_eff_target = 1.0;
  std::int64_t tokens = 0;        // non-padding tokens processed
  double sim_time = 0.0;          // summed simulated iteration time
  double throughput_proxy = 0.0;  // tokens / sim_time
};

struct PaddingReportOptions {
  std::int64_t token_budget = 65536;
  double t_max_interval = 5.0;
  int max_iterations = 0;  // 0 = whole epoch
  Recompute recompute = Recompute::None;
};

/// Compares DP micro-batching, first-fit packing to max_seq_len, and naive
/// whole-mini-batch padding on the same sample stream, re-truncated per
/// max_seq_len. All methods run under the 1F1B schedule so only the batching
/// differs. One row per (method, max_seq_len), aggregated over iterations.
std::vector<PaddingRow> padding_vs_packing_report(std::span<const Sample> samples,
                                                  std::span<const std::int64_t> max_seq_lens,
                                                  const ProfileGrid& grid,
                                                  const ModelConfig& config,
                                                  const PaddingReportOptions& options);

}  // namespace pipeplan
