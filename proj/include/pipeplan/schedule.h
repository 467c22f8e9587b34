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

#include <functional>
#include <span>
#include <vector>

#include "pipeplan/cost_model.h"
#include "pipeplan/microbatch.h"

namespace pipeplan {

enum class OpDir { Forward, Backward };

/// One computation op in a pipeline: (micro-batch, stage, direction).
struct StageOp {
  int microbatch = 0;
  int stage = 0;
  OpDir dir = OpDir::Forward;
};

struct ScheduledOp {
  int microbatch = 0;
  OpDir dir = OpDir::Forward;
  int cycle = 0;
};

enum class SchedulePolicy { OneFOneB, Adaptive };

/// Per-device execution orders plus the memory ledger peaks observed while
/// scheduling.
struct PipelineSchedule {
  std::vector<std::vector<ScheduledOp>> orders;  // one list per device
  std::vector<double> peak_mem;
  SchedulePolicy policy = SchedulePolicy::OneFOneB;
  int micro_batches = 0;
  int stages = 0;
  int cycles = 0;
};

/// Standard 1F1B: stage j (1-based) runs min(C - j + 1, M) warm-up forwards,
/// then alternates backward/forward, then drains the remaining backwards.
PipelineSchedule schedule_1f1b(int micro_batches, int stages);

/// Memory-aware adaptive schedule. Per cycle every device first pops at most
/// one ready backward, then at most one ready forward; a forward is admitted
/// only while current memory + its activation stays strictly below the device
/// limit, otherwise it is pushed back and retried next cycle. Ops unlocked
/// during a cycle become visible at the next one. `injection_order` is the
/// initial forward buffer of stage 0.
PipelineSchedule schedule_adaptive(const OpCostTable& costs, std::span<const double> limits,
                                   std::span<const int> injection_order);

/// Replayed timing of one scheduled op. `ready` is the instant all producer
/// stages finished (-inf for stage-0 forwards, which are pre-loaded).
struct OpTimes {
  double ready = 0.0;
  double start = 0.0;
  double end = 0.0;
};

/// Executes the schedule respecting device order and cross-stage dependencies
/// under the given durations. Throws std::logic_error if the orders are not
/// executable (a dependency cycle).
std::vector<std::vector<OpTimes>> replay_schedule(const PipelineSchedule& schedule,
                                                  const OpCostTable& costs);

struct StockSample {
  int device = 0;
  int op_index = 0;
  int microbatch = 0;
  OpDir dir = OpDir::Forward;
  double start_time = 0.0;
  int stock = 0;     // ready-but-unstarted ops buffered at this device
  bool packed = false;  // started with zero idle after the previous op
};

/// Replays the schedule and records, at every op start, how many ops of the
/// same device were already ready strictly before that instant.
std::vector<StockSample> safety_stock_trace(const PipelineSchedule& schedule,
                                            const OpCostTable& costs);

/// Makespan oracle used by the injection-order search.
using OrderEvaluator = std::function<double(const PipelineSchedule&)>;

/// Clusters micro-batches by predicted time (1-D k-means, quantile seeding),
/// tries every cluster permutation as an injection order for the adaptive
/// schedule and returns the order with the smallest evaluated makespan. Ties
/// prefer the identity order.
std::vector<int> order_microbatches(std::span<const double> predicted_times,
                                    const OpCostTable& costs, std::span<const double> limits,
                                    int n_clusters, const OrderEvaluator& evaluator);

struct RecomputeSelection {
  Recompute strategy = Recompute::None;
  PipelineSchedule schedule;
  OpCostTable costs;
};

/// Walks the allowed strategies from cheapest compute to most memory-saving
/// and returns the first whose costing fits every device limit. Throws
/// InfeasibleError (with the lowest violating stage) when none does.
RecomputeSelection select_recomputation(const ProfileGrid& grid, const ModelConfig& config,
                                        const MicroBatchPartition& partition,
                                        std::span<const double> limits,
                                        std::span<const Recompute> strategies);

}  // namespace pipeplan
