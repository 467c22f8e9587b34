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

#include "pipeplan/driver.h"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "pipeplan/errors.h"

namespace pipeplan {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

LengthDistribution parse_distribution(const json& j) {
  LengthDistribution d;
  const std::string family = j.value("family", "lognormal");
  if (family == "lognormal") {
    d.family = LengthFamily::Lognormal;
  } else if (family == "uniform") {
    d.family = LengthFamily::Uniform;
  } else if (family == "mixture") {
    d.family = LengthFamily::Mixture;
  } else {
    throw std::invalid_argument("unknown length family: " + family);
  }
  d.log_mean = j.value("log_mean", d.log_mean);
  d.log_sigma = j.value("log_sigma", d.log_sigma);
  d.uniform_lo = j.value("uniform_lo", d.uniform_lo);
  d.uniform_hi = j.value("uniform_hi", d.uniform_hi);
  d.lognormal_weight = j.value("lognormal_weight", d.lognormal_weight);
  return d;
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n') c = ';';
  return s;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config is not valid JSON: " + std::string(e.what()));
  }

  RunConfig cfg;
  try {
    if (!j.contains("dataset")) throw std::invalid_argument("config is missing 'dataset'");
    const json& ds = j.at("dataset");
    cfg.dataset.path = ds.value("path", "");
    if (ds.contains("synthetic")) {
      const json& syn = ds.at("synthetic");
      SyntheticSpec spec;
      spec.n = syn.value("n", 1000);
      if (syn.contains("input")) spec.input = parse_distribution(syn.at("input"));
      if (syn.contains("target")) spec.target = parse_distribution(syn.at("target"));
      cfg.dataset.synthetic = spec;
    }
    cfg.dataset.max_seq_len = ds.value("max_seq_len", 2048);
    cfg.dataset.seed = ds.value("seed", 0);

    cfg.token_budget = j.value("token_budget", cfg.token_budget);
    cfg.stages = j.value("stages", cfg.stages);
    cfg.replicas = j.value("replicas", cfg.replicas);

    if (j.contains("model")) {
      const json& m = j.at("model");
      cfg.layers_per_stage = m.value("layers_per_stage", cfg.layers_per_stage);
      cfg.hidden_dim = m.value("hidden_dim", cfg.hidden_dim);
      cfg.encoder_decoder = m.value("encoder_decoder", cfg.encoder_decoder);
      if (m.contains("recompute")) {
        cfg.recompute.clear();
        for (const auto& name : m.at("recompute"))
          cfg.recompute.push_back(recompute_from_string(name.get<std::string>()));
      }
    }

    if (j.contains("grid")) {
      const json& g = j.at("grid");
      cfg.grid_file = g.value("file", "");
      cfg.grid_params.alpha = g.value("alpha", cfg.grid_params.alpha);
      cfg.grid_params.beta = g.value("beta", cfg.grid_params.beta);
      cfg.grid_params.gamma = g.value("gamma", cfg.grid_params.gamma);
      cfg.grid_params.tp_degree = g.value("tp_degree", cfg.grid_params.tp_degree);
      cfg.grid_params.full_mem_factor =
          g.value("full_mem_factor", cfg.grid_params.full_mem_factor);
      cfg.grid_params.selective_mem_factor =
          g.value("selective_mem_factor", cfg.grid_params.selective_mem_factor);
    }

    if (j.contains("memory_limits")) {
      cfg.device_limits = j.at("memory_limits").get<std::vector<double>>();
    } else {
      cfg.device_limits.assign(static_cast<std::size_t>(cfg.stages),
                               j.value("memory_limit", 40960.0));
    }

    const std::string ordering = j.value("ordering", "sort");
    if (ordering == "sort") {
      cfg.ordering = OrderMethod::Sort;
    } else if (ordering == "tsp") {
      cfg.ordering = OrderMethod::Tsp;
    } else {
      throw std::invalid_argument("unknown ordering method: " + ordering);
    }

    cfg.t_max_interval = j.value("t_max_interval", cfg.t_max_interval);
    cfg.n_clusters = j.value("n_clusters", cfg.n_clusters);

    const std::string policy = j.value("policy", "adaptive");
    if (policy == "adaptive") {
      cfg.policy = SchedulePolicy::Adaptive;
    } else if (policy == "1f1b") {
      cfg.policy = SchedulePolicy::OneFOneB;
    } else {
      throw std::invalid_argument("unknown schedule policy: " + policy);
    }

    cfg.comm_latency = j.value("comm_latency", cfg.comm_latency);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.max_iterations = j.value("max_iterations", cfg.max_iterations);

    if (j.contains("experiment")) {
      const json& e = j.at("experiment");
      if (e.contains("sigmas")) cfg.sweep_sigmas = e.at("sigmas").get<std::vector<double>>();
      if (e.contains("stage_counts"))
        cfg.sweep_stage_counts = e.at("stage_counts").get<std::vector<int>>();
      cfg.sweep_trials = e.value("trials", cfg.sweep_trials);
      cfg.sweep_microbatches = e.value("microbatches", cfg.sweep_microbatches);
      if (e.contains("max_seq_lens"))
        cfg.report_max_seq_lens = e.at("max_seq_lens").get<std::vector<std::int64_t>>();
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("bad config value: " + std::string(e.what()));
  }

  if (cfg.stages < 1 || cfg.replicas < 1 || cfg.token_budget < 1 || cfg.workers < 1)
    throw std::invalid_argument("counts in the config must be >= 1");
  if (static_cast<int>(cfg.device_limits.size()) != cfg.stages)
    throw std::invalid_argument("memory_limits must list one limit per stage");
  return cfg;
}

ProfileGrid make_grid(const RunConfig& config) {
  if (!config.grid_file.empty()) return ProfileGrid::load_file(config.grid_file);
  return ProfileGrid::synthetic(config.grid_params);
}

ModelConfig make_model(const RunConfig& config) {
  ModelConfig model = ModelConfig::uniform(config.stages, config.layers_per_stage,
                                           config.hidden_dim, config.encoder_decoder);
  model.recompute_allowed = config.recompute;
  return model;
}

PlanningOptions make_planning_options(const RunConfig& config) {
  PlanningOptions opt;
  opt.replicas = config.replicas;
  opt.device_limits = config.device_limits;
  opt.ordering = config.ordering;
  opt.t_max_interval = config.t_max_interval;
  opt.n_clusters = config.n_clusters;
  opt.policy = config.policy;
  opt.comm_latency = config.comm_latency;
  return opt;
}

int run_plan(const RunConfig& config, std::ostream& log) {
  using clock = std::chrono::steady_clock;
  const ProfileGrid grid = make_grid(config);
  const ModelConfig model = make_model(config);
  const auto samples = load_dataset(config.dataset);

  std::vector<MiniBatch> minibatches;
  std::size_t cursor = 0;
  while (auto draw = draw_minibatch(samples, config.token_budget, cursor)) {
    minibatches.push_back(std::move(draw->minibatch));
    cursor = draw->next_cursor;
    if (config.max_iterations > 0 &&
        static_cast<int>(minibatches.size()) >= config.max_iterations)
      break;
  }

  const std::size_t n = minibatches.size();
  std::vector<IterationPlanResult> results(n);
  std::vector<double> wall_ms(n, 0.0);
  std::atomic<std::size_t> next{0};

  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      PlanningOptions opt = make_planning_options(config);
      opt.iteration = static_cast<std::int64_t>(i);
      const auto t0 = clock::now();
      results[i] = plan_iteration(minibatches[i], grid, model, opt);
      wall_ms[i] = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
  };
  const int workers = std::min<int>(config.workers, static_cast<int>(n));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::filesystem::create_directories(config.output_dir);
  std::ofstream index(std::filesystem::path(config.output_dir) / "plans_index.csv",
                      std::ios::binary);
  index << "iteration,replica,micro_batches,strategy,objective,t_max,max_replica_load,"
           "padding_eff_input,padding_eff_target,predicted_makespan,bubble_ratio,peak_mem_max,"
           "feasible,reason\n";

  double total_plan_ms = 0.0;
  double total_sim_time = 0.0;
  std::size_t feasible = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& res = results[i];
    total_plan_ms += wall_ms[i];
    if (!res.feasible) {
      index << i << ",-1,0,,,,,,,,,,0," << csv_safe(res.infeasible_reason) << "\n";
      log << "iteration " << i << ": infeasible (" << res.infeasible_reason << ")\n";
      continue;
    }
    ++feasible;
    total_sim_time += res.predicted_iteration_time();
    for (const auto& rep : res.replicas) {
      const auto file = std::filesystem::path(config.output_dir) /
                        ("iter_" + std::to_string(i) + "_replica_" +
                         std::to_string(rep.replica) + ".plan");
      save_plan_file(rep.plan, file.string());
      double peak = 0.0;
      for (const auto& d : rep.report.devices) peak = std::max(peak, d.peak_mem);
      index << i << ',' << rep.replica << ',' << rep.plan.shape_table.size() << ','
            << to_string(rep.strategy) << ',' << fmt_double(res.partition.objective_value) << ','
            << fmt_double(res.partition.t_max_used) << ','
            << fmt_double(res.partition.max_replica_load) << ','
            << fmt_double(res.padding.input) << ',' << fmt_double(res.padding.target) << ','
            << fmt_double(rep.report.makespan) << ',' << fmt_double(rep.report.bubble_ratio)
            << ',' << fmt_double(peak) << ",1,\n";
    }
    log << "iteration " << i << ": " << res.partition.micro_batches.size()
        << " micro-batches, strategy " << to_string(res.replicas.front().strategy)
        << ", planned in " << wall_ms[i] << " ms, predicted "
        << res.predicted_iteration_time() << " " << grid.time_unit() << "\n";
  }

  log << "planned " << n << " iterations (" << feasible << " feasible), total "
      << total_plan_ms << " ms\n";
  if (feasible > 0 && total_sim_time > 0) {
    const double mean_plan_ms = total_plan_ms / static_cast<double>(n);
    const double mean_iter = total_sim_time / static_cast<double>(feasible);
    log << "mean planning time " << mean_plan_ms << " ms; mean predicted iteration time "
        << mean_iter << " " << grid.time_unit() << "; planning/iteration ratio "
        << (grid.time_unit() == "us" ? mean_plan_ms * 1000.0 / mean_iter : 0.0) << "\n";
  }
  return 0;
}

namespace {

int run_variation_sweep(const RunConfig& config, std::ostream& log) {
  const auto rows =
      variation_sweep(config.sweep_microbatches, config.sweep_stage_counts, config.sweep_sigmas,
                      config.sweep_trials, config.seed);
  std::filesystem::create_directories(config.output_dir);
  std::ofstream csv(std::filesystem::path(config.output_dir) / "variation_sweep.csv",
                    std::ios::binary);
  csv << "scheduler,stages,sigma,mean_makespan,normalized\n";
  for (const auto& r : rows)
    csv << r.scheduler << ',' << r.stages << ',' << fmt_double(r.sigma) << ','
        << fmt_double(r.mean_makespan) << ',' << fmt_double(r.normalized) << "\n";
  log << "variation_sweep: " << rows.size() << " rows over " << config.sweep_trials
      << " trials\n";
  for (const auto& r : rows)
    log << "  " << r.scheduler << " C=" << r.stages << " sigma=" << r.sigma
        << " normalized=" << r.normalized << "\n";
  return 0;
}

int run_padding_report(const RunConfig& config, const std::string& kind, std::ostream& log) {
  DatasetSpec spec = config.dataset;
  for (auto len : config.report_max_seq_lens) spec.max_seq_len = std::max(spec.max_seq_len, len);
  const auto samples = load_dataset(spec);
  const ProfileGrid grid = make_grid(config);
  const ModelConfig model = make_model(config);
  PaddingReportOptions opt;
  opt.token_budget = config.token_budget;
  opt.t_max_interval = config.t_max_interval;
  opt.max_iterations = config.max_iterations;
  const auto rows =
      padding_vs_packing_report(samples, config.report_max_seq_lens, grid, model, opt);

  std::filesystem::create_directories(config.output_dir);
  std::ofstream csv(std::filesystem::path(config.output_dir) / (kind + ".csv"),
                    std::ios::binary);
  csv << "method,max_seq_len,padding_eff_input,padding_eff_target,tokens,sim_time,"
         "throughput_proxy\n";
  for (const auto& r : rows) {
    if (kind == "seqlen_scaling" && r.method == BatchingMethod::NaivePadding) continue;
    csv << to_string(r.method) << ',' << r.max_seq_len << ','
        << fmt_double(r.padding_eff_input) << ',' << fmt_double(r.padding_eff_target) << ','
        << r.tokens << ',' << fmt_double(r.sim_time) << ',' << fmt_double(r.throughput_proxy)
        << "\n";
    log << "  " << to_string(r.method) << " max_seq_len=" << r.max_seq_len
        << " padding_eff=" << r.padding_eff_input
        << " throughput_proxy=" << r.throughput_proxy << "\n";
  }
  return 0;
}

}  // namespace

int run_experiment(const RunConfig& config, const std::string& kind, std::ostream& log) {
  log << "experiment " << kind << "\n";
  if (kind == "variation_sweep") return run_variation_sweep(config, log);
  if (kind == "padding_report" || kind == "seqlen_scaling")
    return run_padding_report(config, kind, log);
  throw std::invalid_argument("unknown experiment kind: " + kind);
}

namespace {

OpCostTable costs_for_loaded_plan(const ExecutionPlan& plan, const std::string& grid_path) {
  if (!grid_path.empty()) {
    const ProfileGrid grid = ProfileGrid::load_file(grid_path);
    return costs_for_plan(plan, grid);
  }
  return OpCostTable::uniform(static_cast<int>(plan.shape_table.size()), plan.stage_count, 1.0,
                              1.0, 1.0);
}

PipelineSchedule schedule_from_plan(const ExecutionPlan& plan) {
  PipelineSchedule sched;
  sched.policy = SchedulePolicy::Adaptive;
  sched.stages = plan.stage_count;
  sched.micro_batches = static_cast<int>(plan.shape_table.size());
  sched.orders.resize(plan.devices.size());
  sched.peak_mem.assign(plan.devices.size(), 0.0);
  for (std::size_t j = 0; j < plan.devices.size(); ++j) {
    int pos = 0;
    for (const auto& ins : plan.devices[j]) {
      if (!is_compute(ins.kind)) continue;
      sched.orders[j].push_back({ins.microbatch,
                                 ins.kind == InstrKind::ForwardPass ? OpDir::Forward
                                                                    : OpDir::Backward,
                                 pos++});
    }
  }
  return sched;
}

}  // namespace

int run_simulate(const SimulateArgs& args, std::ostream& log) {
  const ExecutionPlan plan = load_plan_file(args.plan_path);
  const OpCostTable costs = costs_for_loaded_plan(plan, args.grid_path);

  std::vector<SimReport> reports;
  for (int trial = 0; trial < std::max(1, args.trials); ++trial) {
    SimConfig cfg;
    cfg.noise_sigma = args.sigma;
    cfg.seed = args.seed + static_cast<std::uint64_t>(trial);
    cfg.comm_latency = args.comm_latency;
    reports.push_back(simulate(plan, costs, cfg));
  }

  double mean_makespan = 0.0;
  bool any_deadlock = false;
  for (const auto& r : reports) {
    mean_makespan += r.makespan;
    any_deadlock = any_deadlock || r.deadlock;
  }
  mean_makespan /= static_cast<double>(reports.size());

  const SimReport& first = reports.front();
  log << "plan " << args.plan_path << ": stages=" << plan.stage_count
      << " micro_batches=" << plan.shape_table.size() << "\n";
  log << "makespan " << first.makespan;
  if (reports.size() > 1) log << " (mean over " << reports.size() << " trials: " << mean_makespan << ")";
  log << ", bubble_ratio " << first.bubble_ratio << (any_deadlock ? ", DEADLOCK" : "") << "\n";
  for (std::size_t j = 0; j < first.devices.size(); ++j) {
    const auto& d = first.devices[j];
    log << "  device " << j << ": busy " << d.busy << ", blocked " << d.blocked << ", idle "
        << d.idle << ", peak_mem " << d.peak_mem << "\n";
  }
  if (any_deadlock)
    for (const auto& w : first.witnesses)
      log << "  blocked: device " << w.device << " instr " << w.instr_index << " "
          << to_string(w.instr.kind) << " mb " << w.instr.microbatch << "\n";

  if (!args.report_csv.empty()) {
    std::ofstream csv(args.report_csv, std::ios::binary);
    csv << "device,busy,blocked,idle,peak_mem\n";
    for (std::size_t j = 0; j < first.devices.size(); ++j) {
      const auto& d = first.devices[j];
      csv << j << ',' << fmt_double(d.busy) << ',' << fmt_double(d.blocked) << ','
          << fmt_double(d.idle) << ',' << fmt_double(d.peak_mem) << "\n";
    }
    csv << "makespan," << fmt_double(first.makespan) << ",,,\n";
  }
  if (!args.stock_csv.empty()) {
    const auto trace = safety_stock_trace(schedule_from_plan(plan), costs);
    std::ofstream csv(args.stock_csv, std::ios::binary);
    csv << "device,op_index,microbatch,dir,time,stock\n";
    for (const auto& s : trace)
      csv << s.device << ',' << s.op_index << ',' << s.microbatch << ','
          << (s.dir == OpDir::Forward ? 'F' : 'B') << ',' << fmt_double(s.start_time) << ','
          << s.stock << "\n";
  }
  return any_deadlock ? 1 : 0;
}

int run_validate(const std::string& plan_path, const std::string& grid_path, std::ostream& log) {
  ExecutionPlan plan;
  try {
    plan = load_plan_file(plan_path);
  } catch (const ParseError& e) {
    log << "FAIL: " << e.what() << "\n";
    return 1;
  }
  const ConsistencyReport consistency = verify_order_consistency(plan);
  if (!consistency.ok) {
    log << "FAIL: " << consistency.message << "\n";
    return 1;
  }
  const OpCostTable costs = costs_for_loaded_plan(plan, grid_path);
  const SimReport report = simulate(plan, costs, SimConfig{});
  if (report.deadlock) {
    log << "FAIL: plan deadlocks in simulation; blocked instructions:\n";
    for (const auto& w : report.witnesses)
      log << "  device " << w.device << " instr " << w.instr_index << " "
          << to_string(w.instr.kind) << " mb " << w.instr.microbatch << "\n";
    return 1;
  }
  log << "PASS: structure, order consistency and zero-noise simulation (makespan "
      << report.makespan << ")\n";
  return 0;
}

}  // namespace pipeplan
