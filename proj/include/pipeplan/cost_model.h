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
#include <span>
#include <string>
#include <vector>

#include "pipeplan/workload.h"

namespace pipeplan {

enum class StageKind { Encoder, Decoder };

// Ordered cheapest-compute first; iteration order matters for strategy
// selection.
enum class Recompute { None, Selective, Full };

const char* to_string(StageKind kind);
const char* to_string(Recompute r);
Recompute recompute_from_string(const std::string& name);

/// Predicted per-micro-batch cost on one pipeline stage.
struct CostEstimate {
  double t_f = 0.0;
  double t_b = 0.0;
  double act_mem = 0.0;
};

struct GridCell {
  double t_f = 0.0;
  double t_b = 0.0;
  double act_mem = 0.0;
};

/// Padded tensor dimensions of a micro-batch.
struct PaddedShape {
  std::int64_t mbs = 1;
  std::int64_t input_len = 1;
  std::int64_t target_len = 0;
};

struct SyntheticGridParams {
  double alpha = 0.4;    // per-token linear time coefficient
  double beta = 2e-4;    // per-token^2 attention time coefficient
  double gamma = 0.02;   // per-token activation memory coefficient
  double full_mem_factor = 0.2;
  double selective_mem_factor = 0.6;
  double full_tb_penalty = 1.0;       // extra backward time, in units of t_f
  double selective_tb_penalty = 0.5;
  int tp_degree = 1;  // scales all coefficients down; profiling stand-in
};

/// Profiled (or synthetic) per-layer cost samples on a power-of-two
/// (micro-batch size, sequence length) grid, one table per
/// (stage kind, recompute strategy). Queries between knots are bilinearly
/// interpolated; queries outside the axes extrapolate from the edge segment
/// and are clamped at zero.
class ProfileGrid {
 public:
  static ProfileGrid synthetic(const SyntheticGridParams& params,
                               std::vector<std::int64_t> mbs_axis = {},
                               std::vector<std::int64_t> seq_axis = {});

  GridCell per_layer(StageKind kind, Recompute r, double mbs, double seqlen) const;

  const std::vector<std::int64_t>& mbs_axis() const { return mbs_axis_; }
  const std::vector<std::int64_t>& seq_axis() const { return seq_axis_; }
  int tp_degree() const { return tp_degree_; }
  const std::string& time_unit() const { return time_unit_; }
  const std::string& mem_unit() const { return mem_unit_; }

  void save(std::ostream& out) const;
  static ProfileGrid load(std::istream& in);
  static ProfileGrid load_file(const std::string& path);
  void save_file(const std::string& path) const;

 private:
  ProfileGrid() = default;
  std::size_t cell_index(std::size_t kind, std::size_t r, std::size_t mi, std::size_t si) const;
  void validate() const;

  std::vector<std::int64_t> mbs_axis_;
  std::vector<std::int64_t> seq_axis_;
  // cells_[kind][strategy], mbs-major.
  std::vector<GridCell> cells_;
  int tp_degree_ = 1;
  std::string time_unit_ = "us";
  std::string mem_unit_ = "MB";
};

/// How many encoder/decoder layers a pipeline stage holds.
struct StageLayout {
  int encoder_layers = 0;
  int decoder_layers = 0;
};

struct ModelConfig {
  std::vector<StageLayout> stages;
  std::int64_t hidden_dim = 1024;
  bool is_encoder_decoder = false;
  std::vector<Recompute> recompute_allowed = {Recompute::None, Recompute::Selective,
                                              Recompute::Full};

  int stage_count() const { return static_cast<int>(stages.size()); }

  /// Evenly laid-out model: encoder-decoder models put encoder layers on the
  /// first half of the stages (rounded up) and decoder layers on the rest;
  /// a single stage holds both.
  static ModelConfig uniform(int n_stages, int layers_per_stage, std::int64_t hidden_dim,
                             bool encoder_decoder);
};

/// Per-layer grid values interpolated at the query shape and scaled by the
/// stage's layer counts. Encoder layers read the input length, decoder layers
/// read the target length for encoder-decoder models and the input length
/// otherwise.
CostEstimate estimate(const ProfileGrid& grid, const ModelConfig& config, int stage,
                      std::int64_t mbs, std::int64_t max_input_len, std::int64_t max_target_len,
                      Recompute r);

/// Cost of running a micro-batch, one estimate per pipeline stage. The
/// micro-batch is costed at its padded shape: mbs = sample count and sequence
/// lengths = per-stream maxima.
std::vector<CostEstimate> microbatch_cost(const ProfileGrid& grid, const ModelConfig& config,
                                          const PaddedShape& shape, Recompute r);
std::vector<CostEstimate> microbatch_cost(const ProfileGrid& grid, const ModelConfig& config,
                                          std::span<const Sample> samples, Recompute r);

/// Flat (micro-batch x stage) table of op durations and activation sizes;
/// the planner hands this to the scheduler, communication planner and
/// simulator so they all price ops identically.
struct OpCostTable {
  int micro_batches = 0;
  int stages = 0;
  std::vector<double> t_f;       // [mb * stages + stage]
  std::vector<double> t_b;
  std::vector<double> act_mem;

  double fwd(int mb, int stage) const { return t_f[idx(mb, stage)]; }
  double bwd(int mb, int stage) const { return t_b[idx(mb, stage)]; }
  double act(int mb, int stage) const { return act_mem[idx(mb, stage)]; }

  /// Scalar micro-batch time used by the partitioning objective: the
  /// bottleneck stage's forward+backward time.
  double scalar_time(int mb) const;

  static OpCostTable uniform(int micro_batches, int stages, double t_f, double t_b, double act);
  static OpCostTable from_shapes(const ProfileGrid& grid, const ModelConfig& config,
                                 std::span<const PaddedShape> shapes, Recompute r);

  std::size_t idx(int mb, int stage) const {
    return static_cast<std::size_t>(mb) * static_cast<std::size_t>(stages) +
           static_cast<std::size_t>(stage);
  }
};

}  // namespace pipeplan
