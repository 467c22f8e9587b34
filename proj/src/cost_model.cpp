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

#include "pipeplan/cost_model.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pipeplan/errors.h"

namespace pipeplan {

namespace {

constexpr std::size_t kKinds = 2;
constexpr std::size_t kStrategies = 3;

const char* kKindNames[kKinds] = {"encoder", "decoder"};
const char* kStrategyNames[kStrategies] = {"none", "selective", "full"};

std::vector<std::int64_t> default_pow2_axis(std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> axis;
  for (std::int64_t v = lo; v <= hi; v *= 2) axis.push_back(v);
  return axis;
}

// Interpolation weight along one axis with edge-segment extrapolation: the
// returned (segment, t) pair may have t outside [0, 1] beyond the axis ends.
std::pair<std::size_t, double> bracket(const std::vector<std::int64_t>& axis, double x) {
  if (axis.size() == 1) return {0, 0.0};
  std::size_t seg = 0;
  while (seg + 2 < axis.size() && x >= static_cast<double>(axis[seg + 1])) ++seg;
  const double x0 = static_cast<double>(axis[seg]);
  const double x1 = static_cast<double>(axis[seg + 1]);
  return {seg, (x - x0) / (x1 - x0)};
}

}  // namespace

const char* to_string(StageKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

const char* to_string(Recompute r) { return kStrategyNames[static_cast<std::size_t>(r)]; }

Recompute recompute_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kStrategies; ++i)
    if (name == kStrategyNames[i]) return static_cast<Recompute>(i);
  throw std::invalid_argument("unknown recompute strategy: " + name);
}

std::size_t ProfileGrid::cell_index(std::size_t kind, std::size_t r, std::size_t mi,
                                    std::size_t si) const {
  const std::size_t per_table = mbs_axis_.size() * seq_axis_.size();
  return ((kind * kStrategies + r) * per_table) + mi * seq_axis_.size() + si;
}

void ProfileGrid::validate() const {
  auto check_axis = [](const std::vector<std::int64_t>& axis, const char* name) {
    if (axis.empty()) throw std::invalid_argument(std::string(name) + " axis is empty");
    for (std::size_t i = 1; i < axis.size(); ++i)
      if (axis[i] <= axis[i - 1])
        throw std::invalid_argument(std::string(name) + " axis is not strictly increasing");
  };
  check_axis(mbs_axis_, "mbs");
  check_axis(seq_axis_, "seq");
  if (cells_.size() != kKinds * kStrategies * mbs_axis_.size() * seq_axis_.size())
    throw std::invalid_argument("grid cell table has the wrong size");
  for (const auto& c : cells_)
    if (c.t_f < 0 || c.t_b < 0 || c.act_mem < 0)
      throw std::invalid_argument("grid cells must be non-negative");
}

ProfileGrid ProfileGrid::synthetic(const SyntheticGridParams& params,
                                   std::vector<std::int64_t> mbs_axis,
                                   std::vector<std::int64_t> seq_axis) {
  if (params.alpha <= 0 || params.beta < 0 || params.gamma <= 0)
    throw std::invalid_argument("synthetic grid coefficients must be positive");
  if (params.tp_degree < 1) throw std::invalid_argument("tp_degree must be >= 1");

  ProfileGrid g;
  g.mbs_axis_ = mbs_axis.empty() ? default_pow2_axis(1, 256) : std::move(mbs_axis);
  g.seq_axis_ = seq_axis.empty() ? default_pow2_axis(32, 65536) : std::move(seq_axis);
  g.tp_degree_ = params.tp_degree;
  g.cells_.resize(kKinds * kStrategies * g.mbs_axis_.size() * g.seq_axis_.size());

  const double tp = static_cast<double>(params.tp_degree);
  for (std::size_t kind = 0; kind < kKinds; ++kind) {
    for (std::size_t mi = 0; mi < g.mbs_axis_.size(); ++mi) {
      for (std::size_t si = 0; si < g.seq_axis_.size(); ++si) {
        const double b = static_cast<double>(g.mbs_axis_[mi]);
        const double s = static_cast<double>(g.seq_axis_[si]);
        const double t_f = (params.alpha * b * s + params.beta * b * s * s) / tp;
        const double mem = params.gamma * b * s / tp;
        auto& none = g.cells_[g.cell_index(kind, 0, mi, si)];
        none = {t_f, 2.0 * t_f, mem};
        auto& selective = g.cells_[g.cell_index(kind, 1, mi, si)];
        selective = {t_f, 2.0 * t_f + params.selective_tb_penalty * t_f,
                     mem * params.selective_mem_factor};
        auto& full = g.cells_[g.cell_index(kind, 2, mi, si)];
        full = {t_f, 2.0 * t_f + params.full_tb_penalty * t_f, mem * params.full_mem_factor};
      }
    }
  }
  g.validate();
  return g;
}

GridCell ProfileGrid::per_layer(StageKind kind, Recompute r, double mbs, double seqlen) const {
  const auto [mi, tm] = bracket(mbs_axis_, mbs);
  const auto [si, ts] = bracket(seq_axis_, seqlen);
  const std::size_t k = static_cast<std::size_t>(kind);
  const std::size_t ri = static_cast<std::size_t>(r);

  auto corner = [&](std::size_t dm, std::size_t ds) -> const GridCell& {
    const std::size_t m = std::min(mi + dm, mbs_axis_.size() - 1);
    const std::size_t s = std::min(si + ds, seq_axis_.size() - 1);
    return cells_[cell_index(k, ri, m, s)];
  };

  auto blend = [&](double c00, double c10, double c01, double c11) {
    const double lo = c00 + tm * (c10 - c00);
    const double hi = c01 + tm * (c11 - c01);
    return std::max(0.0, lo + ts * (hi - lo));
  };

  const GridCell& a = corner(0, 0);
  const GridCell& b = corner(1, 0);
  const GridCell& c = corner(0, 1);
  const GridCell& d = corner(1, 1);
  return {blend(a.t_f, b.t_f, c.t_f, d.t_f), blend(a.t_b, b.t_b, c.t_b, d.t_b),
          blend(a.act_mem, b.act_mem, c.act_mem, d.act_mem)};
}

void ProfileGrid::save(std::ostream& out) const {
  out << "pipeplan-grid 1\n";
  out << "time_unit " << time_unit_ << "\n";
  out << "mem_unit " << mem_unit_ << "\n";
  out << "tp_degree " << tp_degree_ << "\n";
  out << "mbs_axis";
  for (auto v : mbs_axis_) out << ' ' << v;
  out << "\nseq_axis";
  for (auto v : seq_axis_) out << ' ' << v;
  out << "\ncolumns kind recompute mbs seq t_f t_b act_mem\n";
  std::ostringstream row;
  row.precision(17);
  for (std::size_t kind = 0; kind < kKinds; ++kind) {
    for (std::size_t r = 0; r < kStrategies; ++r) {
      for (std::size_t mi = 0; mi < mbs_axis_.size(); ++mi) {
        for (std::size_t si = 0; si < seq_axis_.size(); ++si) {
          const GridCell& cell = cells_[cell_index(kind, r, mi, si)];
          row.str("");
          row << "row " << kKindNames[kind] << ' ' << kStrategyNames[r] << ' ' << mbs_axis_[mi]
              << ' ' << seq_axis_[si] << ' ' << cell.t_f << ' ' << cell.t_b << ' '
              << cell.act_mem << '\n';
          out << row.str();
        }
      }
    }
  }
  out << "end\n";
}

void ProfileGrid::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot write grid file: " + path);
  save(out);
}

ProfileGrid ProfileGrid::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open grid file: " + path);
  return load(in);
}

ProfileGrid ProfileGrid::load(std::istream& in) {
  ProfileGrid g;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t offset = 0;
  bool saw_end = false;
  std::vector<bool> filled;

  auto next_line = [&](std::string& dst) {
    if (!std::getline(in, dst)) return false;
    ++line_no;
    offset += static_cast<std::int64_t>(dst.size()) + 1;
    return true;
  };

  if (!next_line(line) || line != "pipeplan-grid 1")
    throw ParseError("missing grid header 'pipeplan-grid 1'", line_no, 0);

  while (next_line(line)) {
    const std::int64_t line_start = offset - static_cast<std::int64_t>(line.size()) - 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "end") {
      saw_end = true;
      break;
    } else if (key == "time_unit") {
      ss >> g.time_unit_;
    } else if (key == "mem_unit") {
      ss >> g.mem_unit_;
    } else if (key == "tp_degree") {
      ss >> g.tp_degree_;
    } else if (key == "mbs_axis" || key == "seq_axis") {
      auto& axis = key == "mbs_axis" ? g.mbs_axis_ : g.seq_axis_;
      std::int64_t v;
      while (ss >> v) axis.push_back(v);
    } else if (key == "columns") {
      // fixed column order, informational
    } else if (key == "row") {
      if (g.cells_.empty()) {
        if (g.mbs_axis_.empty() || g.seq_axis_.empty())
          throw ParseError("grid rows before axes", line_no, line_start);
        g.cells_.resize(kKinds * kStrategies * g.mbs_axis_.size() * g.seq_axis_.size());
        filled.assign(g.cells_.size(), false);
      }
      std::string kind_name, strat_name;
      std::int64_t mbs, seq;
      GridCell cell;
      if (!(ss >> kind_name >> strat_name >> mbs >> seq >> cell.t_f >> cell.t_b >> cell.act_mem))
        throw ParseError("malformed grid row", line_no, line_start);
      std::size_t kind = kKinds, strat = kStrategies;
      for (std::size_t i = 0; i < kKinds; ++i)
        if (kind_name == kKindNames[i]) kind = i;
      for (std::size_t i = 0; i < kStrategies; ++i)
        if (strat_name == kStrategyNames[i]) strat = i;
      auto find = [&](const std::vector<std::int64_t>& axis, std::int64_t v) {
        auto it = std::find(axis.begin(), axis.end(), v);
        return it == axis.end() ? axis.size() : static_cast<std::size_t>(it - axis.begin());
      };
      const std::size_t mi = find(g.mbs_axis_, mbs);
      const std::size_t si = find(g.seq_axis_, seq);
      if (kind == kKinds || strat == kStrategies || mi == g.mbs_axis_.size() ||
          si == g.seq_axis_.size())
        throw ParseError("grid row references an unknown coordinate", line_no, line_start);
      const std::size_t idx = g.cell_index(kind, strat, mi, si);
      g.cells_[idx] = cell;
      filled[idx] = true;
    } else {
      throw ParseError("unknown grid directive '" + key + "'", line_no, line_start);
    }
  }
  if (!saw_end) throw ParseError("grid file truncated: missing 'end'", line_no, offset);
  if (g.cells_.empty()) throw ParseError("grid file has no rows", line_no, offset);
  for (std::size_t i = 0; i < filled.size(); ++i)
    if (!filled[i]) throw ParseError("grid is missing cells", line_no, offset);
  g.validate();
  return g;
}

ModelConfig ModelConfig::uniform(int n_stages, int layers_per_stage, std::int64_t hidden_dim,
                                 bool encoder_decoder) {
  if (n_stages < 1 || layers_per_stage < 1)
    throw std::invalid_argument("stage and layer counts must be >= 1");
  ModelConfig cfg;
  cfg.hidden_dim = hidden_dim;
  cfg.is_encoder_decoder = encoder_decoder;
  cfg.stages.resize(static_cast<std::size_t>(n_stages));
  if (!encoder_decoder) {
    for (auto& s : cfg.stages) s = {0, layers_per_stage};
  } else if (n_stages == 1) {
    cfg.stages[0] = {layers_per_stage, layers_per_stage};
  } else {
    const int encoder_stages = (n_stages + 1) / 2;
    for (int j = 0; j < n_stages; ++j)
      cfg.stages[static_cast<std::size_t>(j)] =
          j < encoder_stages ? StageLayout{layers_per_stage, 0} : StageLayout{0, layers_per_stage};
  }
  return cfg;
}

CostEstimate estimate(const ProfileGrid& grid, const ModelConfig& config, int stage,
                      std::int64_t mbs, std::int64_t max_input_len, std::int64_t max_target_len,
                      Recompute r) {
  if (stage < 0 || stage >= config.stage_count())
    throw std::out_of_range("stage index out of range");
  if (mbs < 1) throw std::invalid_argument("micro-batch size must be >= 1");
  const auto& layout = config.stages[static_cast<std::size_t>(stage)];
  const double decoder_len =
      static_cast<double>(config.is_encoder_decoder ? max_target_len : max_input_len);

  CostEstimate est;
  if (layout.encoder_layers > 0) {
    GridCell c = grid.per_layer(StageKind::Encoder, r, static_cast<double>(mbs),
                                static_cast<double>(max_input_len));
    est.t_f += layout.encoder_layers * c.t_f;
    est.t_b += layout.encoder_layers * c.t_b;
    est.act_mem += layout.encoder_layers * c.act_mem;
  }
  if (layout.decoder_layers > 0) {
    GridCell c = grid.per_layer(StageKind::Decoder, r, static_cast<double>(mbs), decoder_len);
    est.t_f += layout.decoder_layers * c.t_f;
    est.t_b += layout.decoder_layers * c.t_b;
    est.act_mem += layout.decoder_layers * c.act_mem;
  }
  return est;
}

std::vector<CostEstimate> microbatch_cost(const ProfileGrid& grid, const ModelConfig& config,
                                          const PaddedShape& shape, Recompute r) {
  std::vector<CostEstimate> per_stage;
  per_stage.reserve(config.stages.size());
  for (int j = 0; j < config.stage_count(); ++j)
    per_stage.push_back(estimate(grid, config, j, shape.mbs, shape.input_len, shape.target_len, r));
  return per_stage;
}

std::vector<CostEstimate> microbatch_cost(const ProfileGrid& grid, const ModelConfig& config,
                                          std::span<const Sample> samples, Recompute r) {
  if (samples.empty()) throw std::invalid_argument("micro-batch is empty");
  PaddedShape shape;
  shape.mbs = static_cast<std::int64_t>(samples.size());
  shape.input_len = 0;
  shape.target_len = 0;
  for (const auto& s : samples) {
    shape.input_len = std::max(shape.input_len, s.input_len);
    shape.target_len = std::max(shape.target_len, s.target_len);
  }
  return microbatch_cost(grid, config, shape, r);
}

double OpCostTable::scalar_time(int mb) const {
  double worst = 0.0;
  for (int j = 0; j < stages; ++j) worst = std::max(worst, fwd(mb, j) + bwd(mb, j));
  return worst;
}

OpCostTable OpCostTable::uniform(int micro_batches, int stages, double t_f, double t_b,
                                 double act) {
  OpCostTable t;
  t.micro_batches = micro_batches;
  t.stages = stages;
  const std::size_t n = static_cast<std::size_t>(micro_batches) * static_cast<std::size_t>(stages);
  t.t_f.assign(n, t_f);
  t.t_b.assign(n, t_b);
  t.act_mem.assign(n, act);
  return t;
}

OpCostTable OpCostTable::from_shapes(const ProfileGrid& grid, const ModelConfig& config,
                                     std::span<const PaddedShape> shapes, Recompute r) {
  OpCostTable t;
  t.micro_batches = static_cast<int>(shapes.size());
  t.stages = config.stage_count();
  const std::size_t n =
      static_cast<std::size_t>(t.micro_batches) * static_cast<std::size_t>(t.stages);
  t.t_f.resize(n);
  t.t_b.resize(n);
  t.act_mem.resize(n);
  for (int mb = 0; mb < t.micro_batches; ++mb) {
    auto per_stage = microbatch_cost(grid, config, shapes[static_cast<std::size_t>(mb)], r);
    for (int j = 0; j < t.stages; ++j) {
      const std::size_t i = t.idx(mb, j);
      t.t_f[i] = per_stage[static_cast<std::size_t>(j)].t_f;
      t.t_b[i] = per_stage[static_cast<std::size_t>(j)].t_b;
      t.act_mem[i] = per_stage[static_cast<std::size_t>(j)].act_mem;
    }
  }
  return t;
}

}  // namespace pipeplan
