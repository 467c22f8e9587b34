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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pipeplan/driver.h"
#include "pipeplan/errors.h"

namespace {

struct PlanFlags {
  std::string config_path;
  std::string output_dir;
  std::string policy;
  std::string ordering;
  int stages = 0;
  int replicas = 0;
  int workers = 0;
  int max_iterations = -1;
  std::int64_t token_budget = 0;
  double memory_limit = 0.0;
  double t_max_interval = -1.0;
  std::int64_t seed = -1;
};

void apply_overrides(pipeplan::RunConfig& cfg, const PlanFlags& f) {
  if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
  if (f.stages > 0) {
    cfg.stages = f.stages;
    cfg.device_limits.assign(static_cast<std::size_t>(f.stages),
                             cfg.device_limits.empty() ? 40960.0 : cfg.device_limits.front());
  }
  if (f.replicas > 0) cfg.replicas = f.replicas;
  if (f.workers > 0) cfg.workers = f.workers;
  if (f.max_iterations >= 0) cfg.max_iterations = f.max_iterations;
  if (f.token_budget > 0) cfg.token_budget = f.token_budget;
  if (f.memory_limit > 0)
    cfg.device_limits.assign(static_cast<std::size_t>(cfg.stages), f.memory_limit);
  if (f.t_max_interval >= 0) cfg.t_max_interval = f.t_max_interval;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.policy.empty())
    cfg.policy = f.policy == "1f1b" ? pipeplan::SchedulePolicy::OneFOneB
                                    : pipeplan::SchedulePolicy::Adaptive;
  if (!f.ordering.empty())
    cfg.ordering = f.ordering == "tsp" ? pipeplan::OrderMethod::Tsp : pipeplan::OrderMethod::Sort;
}

void add_override_flags(CLI::App* cmd, PlanFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration")->required();
  cmd->add_option("--output-dir", f.output_dir, "override output directory");
  cmd->add_option("--stages", f.stages, "override pipeline stage count");
  cmd->add_option("--replicas", f.replicas, "override data-parallel replica count");
  cmd->add_option("--workers", f.workers, "planner worker threads");
  cmd->add_option("--max-iterations", f.max_iterations, "cap on planned iterations (0 = epoch)");
  cmd->add_option("--token-budget", f.token_budget, "override mini-batch token budget");
  cmd->add_option("--memory-limit", f.memory_limit, "override per-device memory limit");
  cmd->add_option("--t-max-interval", f.t_max_interval, "override t_max quantization step");
  cmd->add_option("--seed", f.seed, "override experiment seed");
  cmd->add_option("--policy", f.policy, "adaptive | 1f1b");
  cmd->add_option("--ordering", f.ordering, "sort | tsp");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"planner and simulator for variable-shape micro-batch pipeline training"};
  app.require_subcommand(1);

  PlanFlags plan_flags;
  CLI::App* plan_cmd = app.add_subcommand("plan", "plan an epoch of mini-batches");
  add_override_flags(plan_cmd, plan_flags);

  PlanFlags exp_flags;
  std::string exp_kind;
  CLI::App* exp_cmd = app.add_subcommand("experiment", "run a simulation experiment");
  exp_cmd->add_option("--kind", exp_kind, "variation_sweep | padding_report | seqlen_scaling")
      ->required();
  add_override_flags(exp_cmd, exp_flags);

  pipeplan::SimulateArgs sim_args;
  std::int64_t sim_seed = 0;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "simulate a plan file");
  sim_cmd->add_option("--plan", sim_args.plan_path, "plan file")->required();
  sim_cmd->add_option("--grid", sim_args.grid_path, "cost grid file (default: unit costs)");
  sim_cmd->add_option("--sigma", sim_args.sigma, "noise stddev as fraction of mean op time");
  sim_cmd->add_option("--seed", sim_seed, "noise seed");
  sim_cmd->add_option("--trials", sim_args.trials, "number of seeded trials");
  sim_cmd->add_option("--latency", sim_args.comm_latency, "per-transfer latency");
  sim_cmd->add_option("--report-csv", sim_args.report_csv, "write per-device stats CSV");
  sim_cmd->add_option("--stock-csv", sim_args.stock_csv, "write safety-stock trace CSV");

  std::string validate_plan, validate_grid;
  CLI::App* val_cmd = app.add_subcommand("validate", "validate a plan file");
  val_cmd->add_option("--plan", validate_plan, "plan file")->required();
  val_cmd->add_option("--grid", validate_grid, "cost grid file (default: unit costs)");

  std::string grid_out;
  pipeplan::SyntheticGridParams grid_params;
  std::int64_t grid_mbs_max = 256, grid_seq_max = 65536;
  CLI::App* grid_cmd = app.add_subcommand("gen-grid", "emit a synthetic cost grid file");
  grid_cmd->add_option("--out", grid_out, "output file")->required();
  grid_cmd->add_option("--alpha", grid_params.alpha, "per-token linear time coefficient");
  grid_cmd->add_option("--beta", grid_params.beta, "per-token^2 attention time coefficient");
  grid_cmd->add_option("--gamma", grid_params.gamma, "per-token memory coefficient");
  grid_cmd->add_option("--tp", grid_params.tp_degree, "tensor-parallel degree scaling");
  grid_cmd->add_option("--mbs-max", grid_mbs_max, "largest micro-batch size knot");
  grid_cmd->add_option("--seq-max", grid_seq_max, "largest sequence length knot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (plan_cmd->parsed()) {
      pipeplan::RunConfig cfg = pipeplan::load_run_config(plan_flags.config_path);
      apply_overrides(cfg, plan_flags);
      return pipeplan::run_plan(cfg, std::cout);
    }
    if (exp_cmd->parsed()) {
      pipeplan::RunConfig cfg = pipeplan::load_run_config(exp_flags.config_path);
      apply_overrides(cfg, exp_flags);
      return pipeplan::run_experiment(cfg, exp_kind, std::cout);
    }
    if (sim_cmd->parsed()) {
      sim_args.seed = static_cast<std::uint64_t>(sim_seed);
      return pipeplan::run_simulate(sim_args, std::cout);
    }
    if (val_cmd->parsed()) {
      return pipeplan::run_validate(validate_plan, validate_grid, std::cout);
    }
    if (grid_cmd->parsed()) {
      std::vector<std::int64_t> mbs_axis, seq_axis;
      for (std::int64_t v = 1; v <= grid_mbs_max; v *= 2) mbs_axis.push_back(v);
      for (std::int64_t v = 32; v <= grid_seq_max; v *= 2) seq_axis.push_back(v);
      const auto grid = pipeplan::ProfileGrid::synthetic(grid_params, mbs_axis, seq_axis);
      grid.save_file(grid_out);
      std::cout << "wrote " << grid_out << "\n";
      return 0;
    }
  } catch (const pipeplan::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
