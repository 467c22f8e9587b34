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

#include "pipeplan/comm_plan.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "pipeplan/errors.h"

namespace pipeplan {

namespace {

const char* kKindNames[] = {
    "ForwardPass",  "BackwardPass", "SendActStart", "RecvActStart", "SendGradStart",
    "RecvGradStart", "WaitSendAct",  "WaitRecvAct",  "WaitSendGrad", "WaitRecvGrad",
};

}  // namespace

const char* to_string(InstrKind kind) { return kKindNames[static_cast<int>(kind)]; }

bool is_compute(InstrKind kind) {
  return kind == InstrKind::ForwardPass || kind == InstrKind::BackwardPass;
}

bool is_start(InstrKind kind) {
  switch (kind) {
    case InstrKind::SendActStart:
    case InstrKind::RecvActStart:
    case InstrKind::SendGradStart:
    case InstrKind::RecvGradStart:
      return true;
    default:
      return false;
  }
}

bool is_wait(InstrKind kind) { return !is_compute(kind) && !is_start(kind); }

CommFamily family_of(InstrKind kind) {
  switch (kind) {
    case InstrKind::SendActStart:
    case InstrKind::WaitSendAct:
      return CommFamily::SendAct;
    case InstrKind::RecvActStart:
    case InstrKind::WaitRecvAct:
      return CommFamily::RecvAct;
    case InstrKind::SendGradStart:
    case InstrKind::WaitSendGrad:
      return CommFamily::SendGrad;
    case InstrKind::RecvGradStart:
    case InstrKind::WaitRecvGrad:
      return CommFamily::RecvGrad;
    default:
      throw std::invalid_argument("computation instruction has no comm family");
  }
}

InstrKind start_of(CommFamily family) {
  switch (family) {
    case CommFamily::SendAct:
      return InstrKind::SendActStart;
    case CommFamily::RecvAct:
      return InstrKind::RecvActStart;
    case CommFamily::SendGrad:
      return InstrKind::SendGradStart;
    case CommFamily::RecvGrad:
      return InstrKind::RecvGradStart;
  }
  throw std::invalid_argument("bad comm family");
}

InstrKind wait_of(CommFamily family) {
  switch (family) {
    case CommFamily::SendAct:
      return InstrKind::WaitSendAct;
    case CommFamily::RecvAct:
      return InstrKind::WaitRecvAct;
    case CommFamily::SendGrad:
      return InstrKind::WaitSendGrad;
    case CommFamily::RecvGrad:
      return InstrKind::WaitRecvGrad;
  }
  throw std::invalid_argument("bad comm family");
}

TensorShape boundary_shape(const MbShapeEntry& mb, std::int64_t hidden_dim,
                           bool encoder_decoder) {
  TensorShape s;
  s.mbs = mb.mbs;
  s.input_len = mb.input_len;
  s.target_len = encoder_decoder ? mb.target_len : 0;
  s.hidden = hidden_dim;
  s.has_target = encoder_decoder;
  return s;
}

ExecutionPlan plan_communication(const PipelineSchedule& schedule, const OpCostTable& costs,
                                 const PlanMeta& meta) {
  const int C = schedule.stages;
  if (static_cast<int>(meta.shape_table.size()) != schedule.micro_batches)
    throw std::invalid_argument("shape table must cover every micro-batch");

  const auto times = replay_schedule(schedule, costs);  // throws on broken dependencies

  ExecutionPlan plan;
  plan.iteration = meta.iteration;
  plan.replica = meta.replica;
  plan.stage_count = C;
  plan.hidden_dim = meta.hidden_dim;
  plan.encoder_decoder = meta.encoder_decoder;
  plan.recompute = meta.recompute;
  plan.stage_layers = meta.stage_layers;
  plan.shape_table = meta.shape_table;
  plan.devices.resize(static_cast<std::size_t>(C));

  // Sweep producing ops in ascending end time and enqueue both endpoints of
  // each transfer atomically; per-device Start order is this sweep order.
  struct Transfer {
    double end = 0.0;
    int device = 0;
    int op_index = 0;
    int microbatch = 0;
    bool act = false;  // activation (forward) or gradient (backward)
  };
  std::vector<Transfer> transfers;
  for (int j = 0; j < C; ++j) {
    const auto& order = schedule.orders[static_cast<std::size_t>(j)];
    for (std::size_t p = 0; p < order.size(); ++p) {
      const auto& op = order[p];
      const bool produces = op.dir == OpDir::Forward ? j + 1 < C : j > 0;
      if (!produces) continue;
      transfers.push_back({times[static_cast<std::size_t>(j)][p].end, j, static_cast<int>(p),
                           op.microbatch, op.dir == OpDir::Forward});
    }
  }
  std::sort(transfers.begin(), transfers.end(), [](const Transfer& a, const Transfer& b) {
    return std::tie(a.end, a.device, a.op_index) < std::tie(b.end, b.device, b.op_index);
  });

  struct PendingStart {
    double enqueue = 0.0;
    std::size_t seq = 0;
    Instruction instr;
  };
  std::vector<std::vector<PendingStart>> starts(static_cast<std::size_t>(C));
  for (std::size_t seq = 0; seq < transfers.size(); ++seq) {
    const Transfer& t = transfers[seq];
    const int target = t.act ? t.device + 1 : t.device - 1;
    const TensorShape shape = boundary_shape(plan.shape_table[static_cast<std::size_t>(t.microbatch)],
                                             meta.hidden_dim, meta.encoder_decoder);
    Instruction send{t.act ? InstrKind::SendActStart : InstrKind::SendGradStart, t.microbatch,
                     target, shape};
    Instruction recv{t.act ? InstrKind::RecvActStart : InstrKind::RecvGradStart, t.microbatch,
                     t.device, shape};
    starts[static_cast<std::size_t>(t.device)].push_back({t.end, seq, send});
    starts[static_cast<std::size_t>(target)].push_back({t.end, seq, recv});
  }

  for (int j = 0; j < C; ++j) {
    const auto& order = schedule.orders[static_cast<std::size_t>(j)];
    const auto& dev_times = times[static_cast<std::size_t>(j)];
    auto& pending = starts[static_cast<std::size_t>(j)];
    std::stable_sort(pending.begin(), pending.end(),
                     [](const PendingStart& a, const PendingStart& b) { return a.seq < b.seq; });

    auto& out = plan.devices[static_cast<std::size_t>(j)];
    // Lazily placed send Waits: one slot per (peer, family) channel.
    std::map<std::pair<int, CommFamily>, Instruction> pending_send_wait;
    std::vector<std::pair<int, CommFamily>> wait_emit_order;

    auto emit_start = [&](const Instruction& start) {
      if (start.kind == InstrKind::SendActStart || start.kind == InstrKind::SendGradStart) {
        const auto channel = std::make_pair(start.peer, family_of(start.kind));
        auto it = pending_send_wait.find(channel);
        if (it != pending_send_wait.end()) {
          out.push_back(it->second);
          pending_send_wait.erase(it);
          wait_emit_order.erase(
              std::find(wait_emit_order.begin(), wait_emit_order.end(), channel));
        }
        out.push_back(start);
        Instruction wait = start;
        wait.kind = wait_of(family_of(start.kind));
        pending_send_wait.emplace(channel, wait);
        wait_emit_order.push_back(channel);
      } else {
        out.push_back(start);
      }
    };

    std::size_t next_start = 0;
    for (std::size_t p = 0; p < order.size(); ++p) {
      const double op_start = dev_times[p].start;
      while (next_start < pending.size() && pending[next_start].enqueue <= op_start)
        emit_start(pending[next_start++].instr);

      const auto& op = order[p];
      const TensorShape shape = boundary_shape(
          plan.shape_table[static_cast<std::size_t>(op.microbatch)], meta.hidden_dim,
          meta.encoder_decoder);
      if (op.dir == OpDir::Forward) {
        if (j > 0)
          out.push_back({InstrKind::WaitRecvAct, op.microbatch, j - 1, shape});
        out.push_back({InstrKind::ForwardPass, op.microbatch, -1, {}});
      } else {
        if (j + 1 < C)
          out.push_back({InstrKind::WaitRecvGrad, op.microbatch, j + 1, shape});
        out.push_back({InstrKind::BackwardPass, op.microbatch, -1, {}});
      }
    }
    while (next_start < pending.size()) emit_start(pending[next_start++].instr);
    for (const auto& channel : wait_emit_order) out.push_back(pending_send_wait.at(channel));
  }
  return plan;
}

ConsistencyReport verify_order_consistency(const ExecutionPlan& plan) {
  ConsistencyReport report;
  auto fail = [&](std::string msg, int a, int b, long pos) {
    report.ok = false;
    report.message = std::move(msg);
    report.device_a = a;
    report.device_b = b;
    report.position = pos;
    return report;
  };

  const int C = plan.stage_count;
  if (static_cast<int>(plan.devices.size()) != C)
    return fail("device count does not match stage count", -1, -1, -1);

  // Start/Wait matching per device: same family + micro-batch, Wait later.
  for (int j = 0; j < C; ++j) {
    const auto& instrs = plan.devices[static_cast<std::size_t>(j)];
    std::map<std::tuple<CommFamily, int>, int> open;  // (family, mb) -> open starts
    for (std::size_t p = 0; p < instrs.size(); ++p) {
      const auto& ins = instrs[p];
      if (is_compute(ins.kind)) continue;
      if (ins.peer < 0 || ins.peer >= C || std::abs(ins.peer - j) != 1)
        return fail(std::string("instruction ") + to_string(ins.kind) +
                        " has a non-adjacent peer",
                    j, ins.peer, static_cast<long>(p));
      if (ins.shape.mbs <= 0 || ins.shape.hidden <= 0)
        return fail("communication instruction carries a non-positive shape", j, ins.peer,
                    static_cast<long>(p));
      const auto key = std::make_tuple(family_of(ins.kind), ins.microbatch);
      if (is_start(ins.kind)) {
        if (++open[key] > 1)
          return fail(std::string("duplicate ") + to_string(ins.kind) + " for micro-batch " +
                          std::to_string(ins.microbatch),
                      j, ins.peer, static_cast<long>(p));
      } else {
        if (--open[key] < 0)
          return fail(std::string(to_string(ins.kind)) + " without a preceding Start", j,
                      ins.peer, static_cast<long>(p));
      }
    }
    for (const auto& [key, count] : open)
      if (count != 0)
        return fail("Start without a matching Wait on device " + std::to_string(j), j, -1, -1);
  }

  // Order consistency per device pair: point-to-point channels admit one
  // transfer at a time, so the k-th comm Start each endpoint posts for the
  // pair must describe the same transfer from opposite ends.
  auto pair_sequence = [&](int device, int peer) {
    std::vector<const Instruction*> seq;
    for (const auto& ins : plan.devices[static_cast<std::size_t>(device)])
      if (is_start(ins.kind) && ins.peer == peer) seq.push_back(&ins);
    return seq;
  };
  auto is_send = [](InstrKind kind) {
    return kind == InstrKind::SendActStart || kind == InstrKind::SendGradStart;
  };
  auto is_act = [](InstrKind kind) {
    return kind == InstrKind::SendActStart || kind == InstrKind::RecvActStart;
  };
  for (int j = 0; j + 1 < C; ++j) {
    const auto lo = pair_sequence(j, j + 1);
    const auto hi = pair_sequence(j + 1, j);
    for (std::size_t p = 0; p < std::max(lo.size(), hi.size()); ++p) {
      const bool mismatch = p >= lo.size() || p >= hi.size() ||
                            lo[p]->microbatch != hi[p]->microbatch ||
                            is_act(lo[p]->kind) != is_act(hi[p]->kind) ||
                            is_send(lo[p]->kind) == is_send(hi[p]->kind);
      if (mismatch)
        return fail("communication order mismatch between devices " + std::to_string(j) +
                        " and " + std::to_string(j + 1) + " at transfer " + std::to_string(p),
                    j, j + 1, static_cast<long>(p));
    }
  }
  return report;
}

void save_plan(const ExecutionPlan& plan, std::ostream& out) {
  out << "pipeplan-plan 1\n";
  out << "iteration " << plan.iteration << "\n";
  out << "replica " << plan.replica << "\n";
  out << "stages " << plan.stage_count << "\n";
  out << "hidden " << plan.hidden_dim << "\n";
  out << "encdec " << (plan.encoder_decoder ? 1 : 0) << "\n";
  out << "recompute " << to_string(plan.recompute) << "\n";
  out << "stage_layers";
  for (const auto& s : plan.stage_layers) out << ' ' << s.encoder_layers << ':' << s.decoder_layers;
  out << "\nmicrobatches " << plan.shape_table.size() << "\n";
  for (std::size_t i = 0; i < plan.shape_table.size(); ++i) {
    const auto& s = plan.shape_table[i];
    out << "mb " << i << ' ' << s.mbs << ' ' << s.input_len << ' ' << s.target_len << "\n";
  }
  for (std::size_t j = 0; j < plan.devices.size(); ++j) {
    const auto& instrs = plan.devices[j];
    out << "device " << j << " ops " << instrs.size() << "\n";
    for (const auto& ins : instrs) {
      out << to_string(ins.kind) << ' ' << ins.microbatch;
      if (!is_compute(ins.kind)) {
        out << " peer " << ins.peer << " shape " << ins.shape.mbs << ' ' << ins.shape.input_len;
        if (ins.shape.has_target) out << ' ' << ins.shape.target_len;
        out << ' ' << ins.shape.hidden;
      }
      out << "\n";
    }
  }
  out << "end\n";
}

std::string plan_to_string(const ExecutionPlan& plan) {
  std::ostringstream ss;
  save_plan(plan, ss);
  return ss.str();
}

void save_plan_file(const ExecutionPlan& plan, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write plan file: " + path);
  save_plan(plan, out);
}

namespace {

class PlanParser {
 public:
  explicit PlanParser(const std::string& text) : text_(text) {}

  ExecutionPlan parse() {
    expect_line("pipeplan-plan 1");
    plan_.iteration = read_keyed_int("iteration");
    plan_.replica = static_cast<int>(read_keyed_int("replica"));
    plan_.stage_count = static_cast<int>(read_keyed_int("stages"));
    plan_.hidden_dim = read_keyed_int("hidden");
    plan_.encoder_decoder = read_keyed_int("encdec") != 0;
    parse_recompute();
    parse_stage_layers();
    const auto mb_count = read_keyed_int("microbatches");
    for (std::int64_t i = 0; i < mb_count; ++i) parse_mb_row(i);
    plan_.devices.resize(static_cast<std::size_t>(plan_.stage_count));
    for (int j = 0; j < plan_.stage_count; ++j) parse_device(j);
    const std::int64_t line_start = offset_;
    if (next_line() != "end") error("expected 'end'", line_start);
    return plan_;
  }

 private:
  [[noreturn]] void error(const std::string& msg, std::int64_t at) const {
    throw ParseError("plan parse error: " + msg, line_no_, at);
  }

  std::string next_line() {
    if (offset_ >= static_cast<std::int64_t>(text_.size()))
      error("unexpected end of file", offset_);
    const auto nl = text_.find('\n', static_cast<std::size_t>(offset_));
    std::string line;
    if (nl == std::string::npos) {
      line = text_.substr(static_cast<std::size_t>(offset_));
      offset_ = static_cast<std::int64_t>(text_.size());
    } else {
      line = text_.substr(static_cast<std::size_t>(offset_),
                          nl - static_cast<std::size_t>(offset_));
      offset_ = static_cast<std::int64_t>(nl) + 1;
    }
    ++line_no_;
    return line;
  }

  void expect_line(const std::string& expected) {
    const std::int64_t at = offset_;
    if (next_line() != expected) error("expected '" + expected + "'", at);
  }

  std::int64_t read_keyed_int(const std::string& key) {
    const std::int64_t at = offset_;
    std::istringstream ss(next_line());
    std::string k;
    std::int64_t v;
    if (!(ss >> k >> v) || k != key) error("expected '" + key + " <int>'", at);
    return v;
  }

  void parse_recompute() {
    const std::int64_t at = offset_;
    std::istringstream ss(next_line());
    std::string k, name;
    if (!(ss >> k >> name) || k != "recompute") error("expected 'recompute <strategy>'", at);
    try {
      plan_.recompute = recompute_from_string(name);
    } catch (const std::exception&) {
      error("unknown recompute strategy '" + name + "'", at);
    }
  }

  void parse_stage_layers() {
    const std::int64_t at = offset_;
    std::istringstream ss(next_line());
    std::string k;
    if (!(ss >> k) || k != "stage_layers") error("expected 'stage_layers'", at);
    std::string pair;
    while (ss >> pair) {
      const auto colon = pair.find(':');
      if (colon == std::string::npos) error("stage_layers entries are 'enc:dec'", at);
      StageLayout layout;
      try {
        layout.encoder_layers = std::stoi(pair.substr(0, colon));
        layout.decoder_layers = std::stoi(pair.substr(colon + 1));
      } catch (const std::exception&) {
        error("stage_layers entries are 'enc:dec'", at);
      }
      plan_.stage_layers.push_back(layout);
    }
    if (static_cast<int>(plan_.stage_layers.size()) != plan_.stage_count)
      error("stage_layers does not list every stage", at);
  }

  void parse_mb_row(std::int64_t expected_index) {
    const std::int64_t at = offset_;
    std::istringstream ss(next_line());
    std::string k;
    std::int64_t idx;
    MbShapeEntry entry;
    if (!(ss >> k >> idx >> entry.mbs >> entry.input_len >> entry.target_len) || k != "mb" ||
        idx != expected_index)
      error("expected 'mb " + std::to_string(expected_index) + " <mbs> <input> <target>'", at);
    plan_.shape_table.push_back(entry);
  }

  void parse_device(int expected) {
    const std::int64_t at = offset_;
    std::istringstream ss(next_line());
    std::string k, opsk;
    std::int64_t idx, count;
    if (!(ss >> k >> idx >> opsk >> count) || k != "device" || opsk != "ops" || idx != expected)
      error("expected 'device " + std::to_string(expected) + " ops <count>'", at);
    auto& list = plan_.devices[static_cast<std::size_t>(expected)];
    for (std::int64_t i = 0; i < count; ++i) list.push_back(parse_instruction());
  }

  Instruction parse_instruction() {
    const std::int64_t at = offset_;
    std::istringstream ss(next_line());
    std::string kind_name;
    Instruction ins;
    if (!(ss >> kind_name >> ins.microbatch)) error("malformed instruction", at);
    bool known = false;
    for (int k = 0; k < 10; ++k) {
      if (kind_name == kKindNames[k]) {
        ins.kind = static_cast<InstrKind>(k);
        known = true;
        break;
      }
    }
    if (!known) error("unknown instruction kind '" + kind_name + "'", at);
    if (!is_compute(ins.kind)) {
      std::string peer_k, shape_k;
      if (!(ss >> peer_k >> ins.peer >> shape_k) || peer_k != "peer" || shape_k != "shape")
        error("communication instruction missing peer/shape", at);
      ins.shape.has_target = plan_.encoder_decoder;
      if (plan_.encoder_decoder) {
        if (!(ss >> ins.shape.mbs >> ins.shape.input_len >> ins.shape.target_len >>
              ins.shape.hidden))
          error("expected 4-dim shape", at);
      } else {
        if (!(ss >> ins.shape.mbs >> ins.shape.input_len >> ins.shape.hidden))
          error("expected 3-dim shape", at);
      }
    }
    std::string trailing;
    if (ss >> trailing) error("trailing fields on instruction line", at);
    return ins;
  }

  const std::string& text_;
  ExecutionPlan plan_;
  std::int64_t offset_ = 0;
  std::int64_t line_no_ = 0;
};

}  // namespace

ExecutionPlan parse_plan(const std::string& text) { return PlanParser(text).parse(); }

ExecutionPlan load_plan_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open plan file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str());
}

OpCostTable costs_for_plan(const ExecutionPlan& plan, const ProfileGrid& grid) {
  ModelConfig config;
  config.stages = plan.stage_layers;
  config.hidden_dim = plan.hidden_dim;
  config.is_encoder_decoder = plan.encoder_decoder;
  std::vector<PaddedShape> shapes;
  shapes.reserve(plan.shape_table.size());
  for (const auto& e : plan.shape_table) shapes.push_back({e.mbs, e.input_len, e.target_len});
  return OpCostTable::from_shapes(grid, config, shapes, plan.recompute);
}

}  // namespace pipeplan
