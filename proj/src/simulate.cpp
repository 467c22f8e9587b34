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

#include "pipeplan/simulate.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <stdexcept>

#include "pipeplan/rng.h"

namespace pipeplan {

namespace {

// The disturbance models a micro-batch running faster or slower than
// predicted, so one Gaussian is drawn per (seed, micro-batch) and applied to
// every op of that micro-batch. Keying by micro-batch rather than traversal
// order keeps a trial's draws identical across different schedules of the
// same work.
double noisy_duration(double base, double mean, double sigma, std::uint64_t seed, int mb) {
  if (sigma <= 0.0) return base;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(mb) + 1));
  const double perturbed = base + sigma * mean * rng.next_normal();
  const double floor = 1e-9 * std::max(mean, 1.0);
  return std::max(perturbed, floor);
}

struct Channel {
  std::deque<std::pair<int, double>> send_posted;  // (microbatch, post time)
  std::deque<std::pair<int, double>> recv_posted;
  std::map<int, double> completed;  // microbatch -> completion time
  double free_at = 0.0;
};

// Channels are keyed by (lower device of the pair, direction).
using ChannelKey = std::pair<int, bool>;  // (low device, is_activation)

ChannelKey channel_key_for(int device, const Instruction& ins) {
  const CommFamily family = family_of(ins.kind);
  const bool act = family == CommFamily::SendAct || family == CommFamily::RecvAct;
  return {std::min(device, ins.peer), act};
}

bool is_send_family(CommFamily family) {
  return family == CommFamily::SendAct || family == CommFamily::SendGrad;
}

}  // namespace

const char* to_string(BatchingMethod method) {
  switch (method) {
    case BatchingMethod::DpMicrobatch:
      return "dp";
    case BatchingMethod::Packing:
      return "packing";
    case BatchingMethod::NaivePadding:
      return "naive_padding";
  }
  return "?";
}

SimReport simulate(const ExecutionPlan& plan, const OpCostTable& costs, const SimConfig& cfg) {
  const int C = plan.stage_count;
  if (static_cast<int>(plan.devices.size()) != C)
    throw std::invalid_argument("plan device count does not match stage count");

  double mean_duration = 1.0;
  {
    double sum = 0.0;
    long n = 0;
    for (int mb = 0; mb < costs.micro_batches; ++mb) {
      for (int j = 0; j < costs.stages; ++j) {
        sum += costs.fwd(mb, j) + costs.bwd(mb, j);
        n += 2;
      }
    }
    if (n > 0) mean_duration = sum / static_cast<double>(n);
  }

  SimReport report;
  report.devices.assign(static_cast<std::size_t>(C), DeviceStats{});

  std::vector<std::size_t> ptr(static_cast<std::size_t>(C), 0);
  std::vector<double> clock(static_cast<std::size_t>(C), 0.0);
  std::vector<double> mem(static_cast<std::size_t>(C), 0.0);
  std::map<ChannelKey, Channel> channels;

  auto resolve_channels = [&](bool& progressed) {
    for (auto& [key, ch] : channels) {
      while (!ch.send_posted.empty() && !ch.recv_posted.empty() &&
             ch.send_posted.front().first == ch.recv_posted.front().first) {
        const int mb = ch.send_posted.front().first;
        const double start =
            std::max({ch.send_posted.front().second, ch.recv_posted.front().second, ch.free_at});
        const double end = start + cfg.comm_latency;
        ch.completed[mb] = end;
        ch.free_at = end;
        const int low = key.first;
        const bool act = key.second;
        report.transfers.push_back({act ? low : low + 1, act ? low + 1 : low, act, mb, start, end});
        ch.send_posted.pop_front();
        ch.recv_posted.pop_front();
        progressed = true;
      }
    }
  };

  bool done = false;
  while (!done) {
    bool progressed = false;
    for (int j = 0; j < C; ++j) {
      const auto& instrs = plan.devices[static_cast<std::size_t>(j)];
      auto& p = ptr[static_cast<std::size_t>(j)];
      while (p < instrs.size()) {
        const Instruction& ins = instrs[p];
        if (is_compute(ins.kind)) {
          const bool fwd = ins.kind == InstrKind::ForwardPass;
          const double base =
              fwd ? costs.fwd(ins.microbatch, j) : costs.bwd(ins.microbatch, j);
          const double dur =
              noisy_duration(base, mean_duration, cfg.noise_sigma, cfg.seed, ins.microbatch);
          clock[static_cast<std::size_t>(j)] += dur;
          report.devices[static_cast<std::size_t>(j)].busy += dur;
          auto& m = mem[static_cast<std::size_t>(j)];
          if (fwd) {
            m += costs.act(ins.microbatch, j);
            report.devices[static_cast<std::size_t>(j)].peak_mem =
                std::max(report.devices[static_cast<std::size_t>(j)].peak_mem, m);
          } else {
            m -= costs.act(ins.microbatch, j);
          }
          ++p;
          progressed = true;
        } else if (is_start(ins.kind)) {
          Channel& ch = channels[channel_key_for(j, ins)];
          auto& queue = is_send_family(family_of(ins.kind)) ? ch.send_posted : ch.recv_posted;
          queue.emplace_back(ins.microbatch, clock[static_cast<std::size_t>(j)]);
          ++p;
          progressed = true;
        } else {
          Channel& ch = channels[channel_key_for(j, ins)];
          auto it = ch.completed.find(ins.microbatch);
          if (it == ch.completed.end()) break;  // blocked until the transfer lands
          const double completion = it->second;
          auto& t = clock[static_cast<std::size_t>(j)];
          if (completion > t) {
            report.devices[static_cast<std::size_t>(j)].blocked += completion - t;
            t = completion;
          }
          ++p;
          progressed = true;
        }
      }
    }
    resolve_channels(progressed);

    done = true;
    for (int j = 0; j < C; ++j)
      if (ptr[static_cast<std::size_t>(j)] < plan.devices[static_cast<std::size_t>(j)].size())
        done = false;
    if (!done && !progressed) {
      report.deadlock = true;
      for (int j = 0; j < C; ++j) {
        const auto& instrs = plan.devices[static_cast<std::size_t>(j)];
        const std::size_t p = ptr[static_cast<std::size_t>(j)];
        if (p >= instrs.size()) continue;
        const Instruction& wait = instrs[p];
        report.witnesses.push_back({j, static_cast<long>(p), wait});
        if (is_wait(wait.kind)) {
          // Include the posted Start this Wait refers to.
          const InstrKind start_kind = start_of(family_of(wait.kind));
          for (std::size_t q = 0; q < p; ++q) {
            if (instrs[q].kind == start_kind && instrs[q].microbatch == wait.microbatch &&
                instrs[q].peer == wait.peer) {
              report.witnesses.push_back({j, static_cast<long>(q), instrs[q]});
              break;
            }
          }
        }
      }
      break;
    }
  }

  for (int j = 0; j < C; ++j)
    report.makespan = std::max(report.makespan, clock[static_cast<std::size_t>(j)]);
  double non_busy = 0.0;
  for (int j = 0; j < C; ++j) {
    auto& d = report.devices[static_cast<std::size_t>(j)];
    d.idle = report.makespan - d.busy - d.blocked;
    d.final_mem = mem[static_cast<std::size_t>(j)];
    non_busy += d.idle + d.blocked;
  }
  report.bubble_ratio =
      report.makespan > 0 ? non_busy / (static_cast<double>(C) * report.makespan) : 0.0;
  return report;
}

std::vector<SweepRow> variation_sweep(int micro_batches, std::span<const int> stage_counts,
                                      std::span<const double> sigmas, int trials,
                                      std::uint64_t seed, double t_f, double t_b) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  std::vector<SweepRow> rows;

  for (int C : stage_counts) {
    const OpCostTable costs = OpCostTable::uniform(micro_batches, C, t_f, t_b, 1.0);
    PlanMeta meta;
    meta.hidden_dim = 1;
    meta.stage_layers.assign(static_cast<std::size_t>(C), StageLayout{0, 1});
    meta.shape_table.assign(static_cast<std::size_t>(micro_batches), MbShapeEntry{1, 1, 0});

    std::vector<double> unlimited(static_cast<std::size_t>(C), 1e18);
    std::vector<int> identity(static_cast<std::size_t>(micro_batches));
    std::iota(identity.begin(), identity.end(), 0);

    const std::pair<const char*, PipelineSchedule> schedules[] = {
        {"1f1b", schedule_1f1b(micro_batches, C)},
        {"adaptive", schedule_adaptive(costs, unlimited, identity)},
    };

    for (const auto& [name, sched] : schedules) {
      const ExecutionPlan plan = plan_communication(sched, costs, meta);
      SimConfig base_cfg;
      const double baseline = simulate(plan, costs, base_cfg).makespan;
      for (double sigma : sigmas) {
        double sum = 0.0;
        for (int trial = 0; trial < trials; ++trial) {
          SimConfig cfg;
          cfg.noise_sigma = sigma;
          cfg.seed = seed + static_cast<std::uint64_t>(trial);
          sum += simulate(plan, costs, cfg).makespan;
        }
        SweepRow row;
        row.scheduler = name;
        row.stages = C;
        row.sigma = sigma;
        row.mean_makespan = sum / trials;
        row.normalized = row.mean_makespan / baseline;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

namespace {

struct MethodAccumulator {
  std::int64_t actual_input = 0;
  std::int64_t padded_input = 0;
  std::int64_t actual_target = 0;
  std::int64_t padded_target = 0;
  double sim_time = 0.0;
};

// Simulates the shapes as one 1F1B iteration and accumulates tokens/time.
void run_iteration(std::span<const PaddedShape> shapes, const ProfileGrid& grid,
                   const ModelConfig& config, MethodAccumulator& acc) {
  const OpCostTable costs = OpCostTable::from_shapes(grid, config, shapes, Recompute::None);
  PipelineSchedule sched = schedule_1f1b(static_cast<int>(shapes.size()), config.stage_count());
  PlanMeta meta;
  meta.hidden_dim = config.hidden_dim;
  meta.encoder_decoder = config.is_encoder_decoder;
  meta.stage_layers = config.stages;
  for (const auto& s : shapes) meta.shape_table.push_back({s.mbs, s.input_len, s.target_len});
  const ExecutionPlan plan = plan_communication(sched, costs, meta);
  acc.sim_time += simulate(plan, costs, SimConfig{}).makespan;
}

}  // namespace

std::vector<PaddingRow> padding_vs_packing_report(std::span<const Sample> samples,
                                                  std::span<const std::int64_t> max_seq_lens,
                                                  const ProfileGrid& grid,
                                                  const ModelConfig& config,
                                                  const PaddingReportOptions& options) {
  if (samples.empty()) throw std::invalid_argument("padding report needs a non-empty dataset");
  std::vector<PaddingRow> rows;

  for (std::int64_t max_len : max_seq_lens) {
    std::vector<Sample> truncated(samples.begin(), samples.end());
    for (auto& s : truncated) {
      s.input_len = std::min(s.input_len, max_len);
      s.target_len = std::min(s.target_len, max_len);
    }

    MethodAccumulator dp_acc, pack_acc, naive_acc;
    std::size_t cursor = 0;
    int iterations = 0;
    while (cursor < truncated.size()) {
      if (options.max_iterations > 0 && iterations >= options.max_iterations) break;
      auto draw = draw_minibatch(truncated, options.token_budget, cursor);
      if (!draw) break;
      cursor = draw->next_cursor;
      ++iterations;
      const MiniBatch& minibatch = draw->minibatch;

      // DP micro-batching over sorted samples.
      {
        auto ordered = order_samples(minibatch, OrderMethod::Sort);
        DpOptions dp;
        dp.stage_count = config.stage_count();
        dp.replica_count = 1;
        dp.t_max_interval = options.t_max_interval;
        auto cost_fn = make_slice_cost(grid, config, ordered, options.recompute);
        MicroBatchPartition partition = dp_partition(ordered, cost_fn, dp);
        std::vector<PaddedShape> shapes;
        for (const auto& mb : partition.micro_batches) {
          shapes.push_back(mb.shape());
          dp_acc.actual_input += mb.input_tokens;
          dp_acc.padded_input += mb.padded_mbs * mb.padded_input_len;
          dp_acc.actual_target += mb.target_tokens;
          dp_acc.padded_target += mb.padded_mbs * mb.padded_target_len;
        }
        run_iteration(shapes, grid, config, dp_acc);
      }

      // First-fit packing of the combined token stream into max_len bins;
      // every pack becomes a full-length single-sequence micro-batch.
      {
        std::vector<std::int64_t> bins;
        std::int64_t used = 0;
        for (const auto& s : minibatch.samples) {
          const std::int64_t tokens = std::min(s.total_tokens(), max_len);
          used += tokens;
          bool placed = false;
          for (auto& b : bins) {
            if (b + tokens <= max_len) {
              b += tokens;
              placed = true;
              break;
            }
          }
          if (!placed) bins.push_back(tokens);
        }
        pack_acc.actual_input += used;
        pack_acc.padded_input += static_cast<std::int64_t>(bins.size()) * max_len;
        std::vector<PaddedShape> shapes(bins.size(), PaddedShape{1, max_len, 0});
        ModelConfig pack_config = config;
        if (pack_config.is_encoder_decoder) {
          // Packing merges both streams into one sequence.
          for (auto& st : pack_config.stages) {
            st.decoder_layers += st.encoder_layers;
            st.encoder_layers = 0;
          }
          pack_config.is_encoder_decoder = false;
        }
        run_iteration(shapes, grid, pack_config, pack_acc);
      }

      // Naive padding: the whole mini-batch as a single padded micro-batch.
      {
        PaddedShape shape;
        shape.mbs = static_cast<std::int64_t>(minibatch.samples.size());
        for (const auto& s : minibatch.samples) {
          shape.input_len = std::max(shape.input_len, s.input_len);
          shape.target_len = std::max(shape.target_len, s.target_len);
          naive_acc.actual_input += s.input_len;
          naive_acc.actual_target += s.target_len;
        }
        naive_acc.padded_input += shape.mbs * shape.input_len;
        naive_acc.padded_target += shape.mbs * shape.target_len;
        run_iteration(std::span<const PaddedShape>(&shape, 1), grid, config, naive_acc);
      }
    }

    auto emit = [&](BatchingMethod method, const MethodAccumulator& acc) {
      PaddingRow row;
      row.method = method;
      row.max_seq_len = max_len;
      row.padding_eff_input =
          acc.padded_input == 0
              ? 1.0
              : static_cast<double>(acc.actual_input) / static_cast<double>(acc.padded_input);
      row.padding_eff_target =
          acc.padded_target == 0
              ? 1.0
              : static_cast<double>(acc.actual_target) / static_cast<double>(acc.padded_target);
      row.tokens = acc.actual_input + acc.actual_target;
      row.sim_time = acc.sim_time;
      row.throughput_proxy =
          acc.sim_time > 0 ? static_cast<double>(row.tokens) / acc.sim_time : 0.0;
      rows.push_back(row);
    };
    emit(BatchingMethod::DpMicrobatch, dp_acc);
    emit(BatchingMethod::Packing, pack_acc);
    emit(BatchingMethod::NaivePadding, naive_acc);
  }
  return rows;
}

}  // namespace pipeplan
