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
#include "pipeplan/schedule.h"

namespace pipeplan {

enum class InstrKind {
  ForwardPass,
  BackwardPass,
  SendActStart,
  RecvActStart,
  SendGradStart,
  RecvGradStart,
  WaitSendAct,
  WaitRecvAct,
  WaitSendGrad,
  WaitRecvGrad,
};

/// Start/Wait pairs share a family: (send|recv, act|grad).
enum class CommFamily { SendAct, RecvAct, SendGrad, RecvGrad };

const char* to_string(InstrKind kind);
bool is_compute(InstrKind kind);
bool is_start(InstrKind kind);
bool is_wait(InstrKind kind);
CommFamily family_of(InstrKind kind);  // comm kinds only
InstrKind start_of(CommFamily family);
InstrKind wait_of(CommFamily family);

/// Dimensions of a communicated tensor. Encoder-decoder boundaries carry both
/// padded lengths.
struct TensorShape {
  std::int64_t mbs = 0;
  std::int64_t input_len = 0;
  std::int64_t target_len = 0;  // meaningful only when has_target
  std::int64_t hidden = 0;
  bool has_target = false;

  bool operator==(const TensorShape&) const = default;
};

struct Instruction {
  InstrKind kind = InstrKind::ForwardPass;
  int microbatch = 0;
  int peer = -1;        // communication kinds only
  TensorShape shape{};  // communication kinds only

  bool operator==(const Instruction&) const = default;
};

/// Padded micro-batch dimensions recorded in the plan header.
struct MbShapeEntry {
  std::int64_t mbs = 0;
  std::int64_t input_len = 0;
  std::int64_t target_len = 0;
};

/// Per-device instruction sequences for one training iteration of one
/// pipeline replica; the planner's on-disk artifact.
struct ExecutionPlan {
  std::int64_t iteration = 0;
  int replica = 0;
  int stage_count = 0;
  std::int64_t hidden_dim = 0;
  bool encoder_decoder = false;
  Recompute recompute = Recompute::None;
  std::vector<StageLayout> stage_layers;
  std::vector<MbShapeEntry> shape_table;
  std::vector<std::vector<Instruction>> devices;
};

/// Activation/gradient tensor dimensions for a micro-batch crossing a stage
/// boundary.
TensorShape boundary_shape(const MbShapeEntry& mb, std::int64_t hidden_dim, bool encoder_decoder);

struct PlanMeta {
  std::int64_t iteration = 0;
  int replica = 0;
  std::int64_t hidden_dim = 0;
  bool encoder_decoder = false;
  Recompute recompute = Recompute::None;
  std::vector<StageLayout> stage_layers;
  std::vector<MbShapeEntry> shape_table;
};

/// Compiles a schedule into per-device instruction sequences. Both endpoints
/// of every transfer are enqueued at the producing op's end on the simulated
/// timeline (ties: end time, device, op index), which keeps the Start order
/// identical on both sides of every channel; receive Waits go immediately
/// before the consuming computation and send Waits before the next send on
/// the same channel.
ExecutionPlan plan_communication(const PipelineSchedule& schedule, const OpCostTable& costs,
                                 const PlanMeta& meta);

struct ConsistencyReport {
  bool ok = true;
  std::string message;
  int device_a = -1;
  int device_b = -1;
  long position = -1;
};

/// Checks Start/Wait matching and that the two endpoints of every device pair
/// post their communication Starts in mirrored order (the k-th Start on each
/// side must describe the same transfer from opposite ends, the invariant a
/// one-transfer-at-a-time channel needs). Returns the first violation found.
ConsistencyReport verify_order_consistency(const ExecutionPlan& plan);

void save_plan(const ExecutionPlan& plan, std::ostream& out);
std::string plan_to_string(const ExecutionPlan& plan);
void save_plan_file(const ExecutionPlan& plan, const std::string& path);

/// Parses a serialized plan; throws ParseError naming the byte offset.
ExecutionPlan parse_plan(const std::string& text);
ExecutionPlan load_plan_file(const std::string& path);

/// Rebuilds the op cost table for a parsed plan from a profile grid, using
/// the plan's shape table, stage layout and recompute strategy.
OpCostTable costs_for_plan(const ExecutionPlan& plan, const ProfileGrid& grid);

}  // namespace pipeplan
