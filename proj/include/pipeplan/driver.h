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
#include <iosfwd>
#include <string>
#include <vector>

#include "pipeplan/cost_model.h"
#include "pipeplan/planner.h"
#include "pipeplan/simulate.h"
#include "pipeplan/workload.h"

namespace pipeplan {

/// Everything a planning run needs, loadable from a JSON config file with
/// flag overrides applied on top.
struct RunConfig {
  DatasetSpec dataset;
  std::int64_t token_budget = 65536;

  int stages = 2;
  int replicas = 1;
  int layers_per_stage = 2;
  std::int64_t hidden_dim = 1024;
  bool encoder_decoder = false;
  std::vector<Recompute> recompute = {Recompute::None, Recompute::Selective, Recompute::Full};

  std::string grid_file;           // when set, wins over grid_params
  SyntheticGridParams grid_params;

  std::vector<double> device_limits;  // expanded to one per stage
  OrderMethod ordering = OrderMethod::Sort;
  double t_max_interval = 5.0;
  int n_clusters = 3;
  SchedulePolicy policy = SchedulePolicy::Adaptive;
  double comm_latency = 0.0;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  int workers = 1;
  int max_iterations = 0;  // 0 = whole epoch

  // Experiment knobs.
  std::vector<double> sweep_sigmas = {0.0, 0.1, 0.2, 0.3};
  std::vector<int> sweep_stage_counts = {4, 8, 16};
  int sweep_trials = 100;
  int sweep_microbatches = 16;
  std::vector<std::int64_t> report_max_seq_lens = {512, 8192};
};

RunConfig load_run_config(const std::string& path);

ProfileGrid make_grid(const RunConfig& config);
ModelConfig make_model(const RunConfig& config);
PlanningOptions make_planning_options(const RunConfig& config);

/// Plans one epoch (or max_iterations) of mini-batches, writing one plan file
/// per (iteration, replica) plus plans_index.csv into output_dir. Wall-clock
/// planning times go to `log` only, keeping the emitted files reproducible.
int run_plan(const RunConfig& config, std::ostream& log);

/// kind: variation_sweep | padding_report | seqlen_scaling. Writes a CSV and
/// prints a short summary.
int run_experiment(const RunConfig& config, const std::string& kind, std::ostream& log);

struct SimulateArgs {
  std::string plan_path;
  std::string grid_path;  // empty = unit costs
  double sigma = 0.0;
  std::uint64_t seed = 0;
  int trials = 1;
  double comm_latency = 0.0;
  std::string report_csv;
  std::string stock_csv;
};

int run_simulate(const SimulateArgs& args, std::ostream& log);

/// Parses the plan, checks structural and order-consistency invariants and
/// runs a zero-noise simulation. Exit 0 on pass, 1 with a witness otherwise.
int run_validate(const std::string& plan_path, const std::string& grid_path, std::ostream& log);

}  // namespace pipeplan
