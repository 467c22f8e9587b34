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
#include <string>
#include <vector>

#include "pipeplan/comm_plan.h"
#include "pipeplan/cost_model.h"
#include "pipeplan/microbatch.h"
#include "pipeplan/schedule.h"
#include "pipeplan/simulate.h"
#include "pipeplan/workload.h"

namespace pipeplan {

struct PlanningOptions {
  int replicas = 1;
  std::vector<double> device_limits;  // one per stage
  OrderMethod ordering = OrderMethod::Sort;
  double t_max_interval = 5.0;
  int n_clusters = 3;
  SchedulePolicy policy = SchedulePolicy::Adaptive;
  double comm_latency = 0.0;
  std::int64_t iteration = 0;
};

struct ReplicaPlanResult {
  int replica = 0;
  Recompute strategy = Recompute::None;
  std::vector<int> injection_order;
  PipelineSchedule schedule;
  ExecutionPlan plan;
  SimReport report;  // zero-noise simulation of the emitted plan
};

struct IterationPlanResult {
  bool feasible = true;
  std::string infeasible_reason;
  MicroBatchPartition partition;
  PaddingEfficiency padding;
  std::vector<ReplicaPlanResult> replicas;

  /// Data-parallel replicas run concurrently; the iteration takes as long as
  /// the slowest one.
  double predicted_iteration_time() const;
};

/// Full planning pipeline for one mini-batch: order samples, partition with
/// the DP, balance replicas, pick the recomputation strategy, search the
/// micro-batch injection order, and compile communication into one execution
/// plan per replica. Memory infeasibility is reported in the result rather
/// than thrown.
IterationPlanResult plan_iteration(const MiniBatch& minibatch, const ProfileGrid& grid,
                                   const ModelConfig& config, const PlanningOptions& options);

}  // namespace pipeplan
