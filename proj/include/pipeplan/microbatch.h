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
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "pipeplan/cost_model.h"
#include "pipeplan/workload.h"

namespace pipeplan {

/// A contiguous run of the ordered sample list, padded to its own maxima.
struct MicroBatch {
  std::vector<std::int64_t> sample_ids;
  std::int64_t padded_mbs = 0;
  std::int64_t padded_input_len = 0;
  std::int64_t padded_target_len = 0;
  std::int64_t input_tokens = 0;   // non-padding totals
  std::int64_t target_tokens = 0;

  PaddedShape shape() const { return {padded_mbs, padded_input_len, padded_target_len}; }
};

/// Output of the partitioning DP: ordered micro-batches, their data-parallel
/// replica assignment, and the realized iteration-time objective. The
/// objective's sum term uses the 1/D lower bound; max_replica_load is the
/// realized heaviest per-replica total, so the bound's gap stays observable.
struct MicroBatchPartition {
  std::vector<MicroBatch> micro_batches;
  std::vector<int> replica_assignment;  // per micro-batch, in [0, replicas)
  double objective_value = 0.0;
  double t_max_used = 0.0;
  double max_replica_load = 0.0;
};

enum class OrderMethod { Sort, Tsp };

/// Reorders the mini-batch samples so neighbours have similar lengths: Sort is
/// lexicographic by (input_len, target_len), Tsp walks the 2-D length points
/// along a nearest-neighbour tour improved by 2-opt under L1 distance. Both
/// are deterministic with ties broken by sample id.
std::vector<Sample> order_samples(const MiniBatch& minibatch, OrderMethod method);

/// Pipeline iteration-time model: (c-1) * max_i t_i + (1/D) * sum_i t_i.
double eval_objective(std::span<const double> times, int stage_count, int replica_count);

/// Time and per-device activation footprint of one candidate micro-batch.
struct SliceCost {
  double time = 0.0;
  double act_mem = 0.0;
};

/// Cost of the micro-batch formed by ordered samples [begin, end).
using SliceCostFn = std::function<SliceCost(std::size_t begin, std::size_t end)>;

/// Production slice coster: pads the slice to its maxima and prices it with
/// the grid; time is the bottleneck stage's t_f + t_b, memory the largest
/// per-stage activation.
SliceCostFn make_slice_cost(const ProfileGrid& grid, const ModelConfig& config,
                            std::span<const Sample> ordered, Recompute r);

struct DpOptions {
  int stage_count = 1;    // c
  int replica_count = 1;  // D
  double per_mb_mem_cap = std::numeric_limits<double>::infinity();
  // Grid step for candidate t_max values (anchored at 0); 0 keeps the exact
  // candidate set of all consecutive-slice times.
  double t_max_interval = 5.0;
};

/// Optimal consecutive partition of the ordered samples under the iteration
/// time objective, found by sweeping candidate t_max ceilings and running the
/// prefix-sum recurrence restricted to slices with time <= t_max and
/// act_mem <= per_mb_mem_cap. Ties prefer fewer micro-batches, then
/// lexicographically earliest split points. Throws InfeasibleError naming the
/// offending sample when no partition satisfies the memory cap.
MicroBatchPartition dp_partition(std::span<const Sample> ordered, const SliceCostFn& cost,
                                 const DpOptions& options);

/// Karmarkar-Karp largest-differencing assignment of micro-batch times to
/// `replica_count` replicas, balancing per-replica totals. Requires at least
/// as many micro-batches as replicas.
std::vector<int> balance_replicas(std::span<const double> times, int replica_count);

struct PaddingEfficiency {
  double input = 1.0;
  double target = 1.0;
};

/// Non-padding tokens divided by total processed tokens, per stream.
PaddingEfficiency padding_efficiency(const MicroBatchPartition& partition);

/// Builds the MicroBatch record for ordered samples [begin, end).
MicroBatch make_micro_batch(std::span<const Sample> ordered, std::size_t begin, std::size_t end);

}  // namespace pipeplan
