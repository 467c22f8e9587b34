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

#include "pipeplan/planner.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "pipeplan/errors.h"

namespace pipeplan {

double IterationPlanResult::predicted_iteration_time() const {
  double worst = 0.0;
  for (const auto& r : replicas) worst = std::max(worst, r.report.makespan);
  return worst;
}

IterationPlanResult plan_iteration(const MiniBatch& minibatch, const ProfileGrid& grid,
                                   const ModelConfig& config, const PlanningOptions& options) {
  const int C = config.stage_count();
  if (options.replicas < 1) throw std::invalid_argument("replica count must be >= 1");
  if (static_cast<int>(options.device_limits.size()) != C)
    throw std::invalid_argument("one memory limit per stage required");
  if (config.recompute_allowed.empty())
    throw std::invalid_argument("at least one recompute strategy must be allowed");

  IterationPlanResult result;
  const auto ordered = order_samples(minibatch, options.ordering);

  // DP costing uses the cheapest allowed strategy; the per-micro-batch cap is
  // advisory (1/C of the tightest device), with true feasibility certified by
  // the memory-aware scheduler afterwards.
  Recompute dp_strategy = Recompute::Full;
  for (Recompute r : {Recompute::None, Recompute::Selective, Recompute::Full}) {
    if (std::find(config.recompute_allowed.begin(), config.recompute_allowed.end(), r) !=
        config.recompute_allowed.end()) {
      dp_strategy = r;
      break;
    }
  }
  const double tightest =
      *std::min_element(options.device_limits.begin(), options.device_limits.end());

  try {
    DpOptions dp;
    dp.stage_count = C;
    dp.replica_count = options.replicas;
    dp.per_mb_mem_cap = tightest / static_cast<double>(C);
    dp.t_max_interval = options.t_max_interval;
    const auto cost_fn = make_slice_cost(grid, config, ordered, dp_strategy);
    result.partition = dp_partition(ordered, cost_fn, dp);
  } catch (const InfeasibleError& err) {
    result.feasible = false;
    result.infeasible_reason = err.what();
    return result;
  }
  result.padding = padding_efficiency(result.partition);

  for (int d = 0; d < options.replicas; ++d) {
    // Collect this replica's micro-batches, keeping partition order.
    MicroBatchPartition sub;
    for (std::size_t i = 0; i < result.partition.micro_batches.size(); ++i) {
      if (result.partition.replica_assignment[i] != d) continue;
      sub.micro_batches.push_back(result.partition.micro_batches[i]);
    }
    if (sub.micro_batches.empty()) continue;
    sub.replica_assignment.assign(sub.micro_batches.size(), 0);

    ReplicaPlanResult rep;
    rep.replica = d;
    try {
      RecomputeSelection sel = select_recomputation(grid, config, sub, options.device_limits,
                                                    config.recompute_allowed);
      rep.strategy = sel.strategy;

      const int m = static_cast<int>(sub.micro_batches.size());
      PlanMeta meta;
      meta.iteration = options.iteration;
      meta.replica = d;
      meta.hidden_dim = config.hidden_dim;
      meta.encoder_decoder = config.is_encoder_decoder;
      meta.recompute = sel.strategy;
      meta.stage_layers = config.stages;
      for (const auto& mb : sub.micro_batches)
        meta.shape_table.push_back(
            {mb.padded_mbs, mb.padded_input_len, mb.padded_target_len});

      SimConfig zero_noise;
      zero_noise.comm_latency = options.comm_latency;

      if (options.policy == SchedulePolicy::Adaptive) {
        std::vector<double> predicted(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i)
          predicted[static_cast<std::size_t>(i)] = sel.costs.scalar_time(i);
        auto evaluator = [&](const PipelineSchedule& sched) {
          ExecutionPlan candidate = plan_communication(sched, sel.costs, meta);
          return simulate(candidate, sel.costs, zero_noise).makespan;
        };
        rep.injection_order = order_microbatches(predicted, sel.costs, options.device_limits,
                                                 options.n_clusters, evaluator);
        rep.schedule = schedule_adaptive(sel.costs, options.device_limits, rep.injection_order);
      } else {
        rep.injection_order.resize(static_cast<std::size_t>(m));
        std::iota(rep.injection_order.begin(), rep.injection_order.end(), 0);
        rep.schedule = schedule_1f1b(m, C);
      }

      rep.plan = plan_communication(rep.schedule, sel.costs, meta);
      rep.report = simulate(rep.plan, sel.costs, zero_noise);
    } catch (const InfeasibleError& err) {
      result.feasible = false;
      result.infeasible_reason = err.what();
      return result;
    }
    result.replicas.push_back(std::move(rep));
  }
  return result;
}

}  // namespace pipeplan
