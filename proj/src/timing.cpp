#include "tcsim/timing.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tcsim/error.hpp"

namespace tcsim {

std::string latency_key(Arch arch, TileShape shape, PrecisionMode mode) {
  return std::string(to_string(arch)) + "." + to_string(shape) + "." +
         std::string(to_string(mode));
}

int hmma_occupancy(int fedp, const TimingConfig& cfg) {
  const int per_cycle = cfg.fedp_units_per_core * cfg.tensor_cores_per_warp;
  return std::max(1, (fedp + per_cycle - 1) / per_cycle);
}

int hmma_issue_interval(int fedp, const TimingConfig& cfg) {
  return std::max(cfg.initiation_interval, hmma_occupancy(fedp, cfg));
}

TimingConfig TimingConfig::defaults() {
  TimingConfig c;
  // Volta: totals of 54 (mixed) and 64 (fp16) cycles; sets end one set's
  // worth of issue slots apart.
  for (PrecisionMode m : {PrecisionMode::MixedFP32Acc, PrecisionMode::FP16}) {
    const auto ops = decompose_wmma_mma(Arch::Volta, kM16N16K16, m);
    const int spacing = volta_steps_per_set(m) * hmma_issue_interval(ops.front().fedp_count(), c);
    const int total = m == PrecisionMode::MixedFP32Acc ? 54 : 64;
    std::vector<int> cum;
    for (int s = 1; s <= 4; ++s) cum.push_back(total - (4 - s) * spacing);
    c.set_cycles[latency_key(Arch::Volta, kM16N16K16, m)] = cum;
  }
  auto t = [&](TileShape s, PrecisionMode m, std::vector<int> v) {
    c.set_cycles[latency_key(Arch::Turing, s, m)] = std::move(v);
  };
  using P = PrecisionMode;
  t(kM16N16K16, P::MixedFP32Acc, {42, 56, 78, 99});
  t(kM16N16K16, P::FP16, {44, 52, 60, 74});
  t(kM16N16K16, P::Int8, {40, 44, 47, 59});
  t(kM32N8K16, P::MixedFP32Acc, {48, 60, 81, 104});
  t(kM32N8K16, P::FP16, {44, 52, 60, 74});
  t(kM32N8K16, P::Int8, {52, 55, 59, 73});
  t(kM8N32K16, P::MixedFP32Acc, {42, 56, 77, 99});
  t(kM8N32K16, P::FP16, {42, 50, 58, 72});
  t(kM8N32K16, P::Int8, {38, 42, 46, 56});
  t(kM8N8K32, P::Int4, {230});
  return c;
}

namespace {

struct IntField {
  const char* name;
  int TimingConfig::*field;
};

constexpr IntField kIntFields[] = {
    {"pipeline_stages", &TimingConfig::pipeline_stages},
    {"fedp_units_per_core", &TimingConfig::fedp_units_per_core},
    {"tensor_cores_per_sm", &TimingConfig::tensor_cores_per_sm},
    {"tensor_cores_per_warp", &TimingConfig::tensor_cores_per_warp},
    {"initiation_interval", &TimingConfig::initiation_interval},
    {"max_concurrent_tensor_warps", &TimingConfig::max_concurrent_tensor_warps},
    {"alu_ports_per_sm", &TimingConfig::alu_ports_per_sm},
    {"register_bits", &TimingConfig::register_bits},
    {"source_operands", &TimingConfig::source_operands},
    {"load_latency", &TimingConfig::load_latency},
    {"store_latency", &TimingConfig::store_latency},
    {"sector_bytes", &TimingConfig::sector_bytes},
    {"register_base", &TimingConfig::register_base},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TimingConfig TimingConfig::load(std::istream& in) {
  TimingConfig c = defaults();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, 0);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::istringstream vs(value);
    auto bad = [&] { throw ParseError("bad value for '" + key + "'", lineno, eq + 2); };

    if (key.rfind("set_cycles.", 0) == 0) {
      std::vector<int> v;
      int x;
      while (vs >> x) v.push_back(x);
      if (!vs.eof() || v.empty()) bad();
      c.set_cycles[key.substr(11)] = v;
      continue;
    }
    if (key == "store_drains") {
      if (value == "true" || value == "1") c.store_drains = true;
      else if (value == "false" || value == "0") c.store_drains = false;
      else bad();
      continue;
    }
    bool found = false;
    for (const IntField& f : kIntFields) {
      if (key != f.name) continue;
      int x;
      if (!(vs >> x) || !(vs >> std::ws).eof()) bad();
      c.*(f.field) = x;
      found = true;
    }
    if (!found) throw ParseError("unknown timing key '" + key + "'", lineno, 1);
  }
  c.validate();
  return c;
}

TimingConfig TimingConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open timing config " + path);
  return load(in);
}

void TimingConfig::write(std::ostream& out) const {
  out << "# tcsim timing config\n";
  for (const IntField& f : kIntFields) out << f.name << " = " << this->*(f.field) << '\n';
  out << "store_drains = " << (store_drains ? "true" : "false") << '\n';
  for (const auto& [k, v] : set_cycles) {
    out << "set_cycles." << k << " =";
    for (int x : v) out << ' ' << x;
    out << '\n';
  }
}

void TimingConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractViolation("timing config: " + m); };
  for (const IntField& f : kIntFields)
    if (this->*(f.field) <= 0 && std::string(f.name) != "register_base")
      fail(std::string(f.name) + " must be positive");
  if (tensor_cores_per_sm % tensor_cores_per_warp != 0 ||
      max_concurrent_tensor_warps != tensor_cores_per_sm / tensor_cores_per_warp)
    fail("max_concurrent_tensor_warps must equal tensor_cores_per_sm / tensor_cores_per_warp");
  if (register_base < 1 || !(register_base & 1)) fail("register_base must be odd");
  for (const auto& [k, v] : set_cycles) {
    if (v.empty()) fail("empty set_cycles." + k);
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] <= v[i - 1]) fail("set_cycles." + k + " must be strictly increasing");
  }
}

std::vector<int> set_completion_cycles(Arch arch, TileShape shape, PrecisionMode mode,
                                       const TimingConfig& cfg) {
  auto it = cfg.set_cycles.find(latency_key(arch, shape, mode));
  if (it == cfg.set_cycles.end())
    throw UnsupportedFeature("no latency table for " + latency_key(arch, shape, mode));
  return it->second;
}

int wmma_mma_latency(Arch arch, TileShape shape, PrecisionMode mode, const TimingConfig& cfg) {
  return set_completion_cycles(arch, shape, mode, cfg).back();
}

namespace {

int steps_per_set(Arch arch, PrecisionMode mode) {
  return arch == Arch::Volta ? volta_steps_per_set(mode) : 1;
}

int op_latency(Arch arch, TileShape shape, PrecisionMode mode, int set, int fedp,
               const TimingConfig& cfg) {
  const std::vector<int> cum = set_completion_cycles(arch, shape, mode, cfg);
  if (set < 1 || set > static_cast<int>(cum.size()))
    throw ContractViolation("set " + std::to_string(set) + " outside the latency table");
  // the last op of `set` issues (set * steps - 1) intervals after the first
  const int lat = cum[set - 1] - (set * steps_per_set(arch, mode) - 1) *
                                     hmma_issue_interval(fedp, cfg);
  if (lat < cfg.pipeline_stages)
    throw ContractViolation("latency table for " + latency_key(arch, shape, mode) +
                            " is shorter than the pipeline");
  return lat;
}

}  // namespace

int hmma_op_latency(Arch arch, TileShape shape, PrecisionMode mode, int set,
                    const TimingConfig& cfg) {
  const auto ops = decompose_wmma_mma(arch, shape, mode);
  return op_latency(arch, shape, mode, set, ops.front().fedp_count(), cfg);
}

RegisterBandwidth register_bandwidth_demand(const TimingConfig& cfg) {
  RegisterBandwidth r;
  // every lane fetches one register pair per source operand
  r.bits_per_window = kWarpSize * 2 * cfg.source_operands * cfg.register_bits;
  r.window_cycles = cfg.initiation_interval;
  r.bits_per_core_per_cycle = r.bits_per_window / r.window_cycles / cfg.tensor_cores_per_warp;
  r.sm_budget_per_cycle = cfg.alu_ports_per_sm * cfg.register_bits * cfg.source_operands;
  r.supply_per_core_per_cycle = r.sm_budget_per_cycle / cfg.tensor_cores_per_sm;
  return r;
}

TimedInstr lower(const MicroOp& op, const TimingConfig& cfg) {
  TimedInstr t;
  t.kind = op.kind;
  t.src = op.src_pairs;
  t.dst = op.dst_pairs;
  t.fence_after = op.fence_after;
  switch (op.kind) {
    case MicroOpKind::Hmma: {
      t.latency = op_latency(op.arch, op.shape, op.mode, op.set, op.fedp, cfg);
      t.interval = hmma_issue_interval(op.fedp, cfg);
      t.occupancy = hmma_occupancy(op.fedp, cfg);
      t.fedp = op.fedp;
      const RegisterBandwidth bw = register_bandwidth_demand(cfg);
      t.reg_bits_per_cycle = bw.bits_per_window / bw.window_cycles;
      t.reg_cycles = bw.window_cycles;
      t.chain = op.chain;
      break;
    }
    case MicroOpKind::Load:
      t.latency = cfg.load_latency + std::max(op.transactions, 1) - 1;
      break;
    case MicroOpKind::Store:
      t.latency = cfg.store_latency + std::max(op.transactions, 1) - 1;
      break;
  }
  return t;
}

// ---- scheduler ----

Scheduler::Scheduler(const TimingConfig& cfg, int warps, bool record)
    : cfg_(cfg), record_(record), warps_(static_cast<std::size_t>(std::max(warps, 0))) {
  cfg_.validate();
  reg_budget_ = register_bandwidth_demand(cfg_).sm_budget_per_cycle;
  for (Warp& w : warps_) {
    w.pair_ready.assign(WarpState::kRegs + 2, 0);
    w.pair_chain.assign(WarpState::kRegs + 2, -1);
  }
}

void Scheduler::push(int warp, TimedInstr instr) {
  Warp& w = warps_.at(warp);
  if (w.closed) throw ContractViolation("push to a closed warp");
  for (int p : instr.src)
    if (p < 0 || p >= static_cast<int>(w.pair_ready.size())) throw ContractViolation("register pair out of range");
  for (int p : instr.dst)
    if (p < 0 || p >= static_cast<int>(w.pair_ready.size())) throw ContractViolation("register pair out of range");
  w.queue.push_back(std::move(instr));
  advance(false);
}

void Scheduler::close(int warp) {
  warps_.at(warp).closed = true;
  advance(false);
}

std::int64_t Scheduler::ready_time(const Warp& w, const TimedInstr& in) const {
  std::int64_t r = std::max({now_, w.next_any, w.drain_until});
  if (in.kind == MicroOpKind::Hmma) r = std::max(r, w.next_hmma);
  auto dep = [&](int p) {
    // results inside one mma chain are forwarded
    if (in.chain >= 0 && w.pair_chain[p] == in.chain) return;
    r = std::max(r, w.pair_ready[p]);
  };
  for (int p : in.src) dep(p);
  for (int p : in.dst) dep(p);
  return r;
}

void Scheduler::advance(bool final) {
  constexpr std::int64_t kNever = std::numeric_limits<std::int64_t>::max();
  std::vector<int> order;
  while (true) {
    bool pending = false;
    for (const Warp& w : warps_) {
      if (!w.queue.empty()) pending = true;
      else if (!w.closed && !final) return;
    }
    if (!pending) return;

    order.clear();
    for (int i = 0; i < static_cast<int>(warps_.size()); ++i)
      if (!warps_[i].queue.empty()) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return warps_[a].last_issue < warps_[b].last_issue;
    });

    bool issued = false;
    std::int64_t next = kNever;
    for (int id : order) {
      Warp& w = warps_[id];
      TimedInstr& in = w.queue.front();
      const std::int64_t r = ready_time(w, in);
      if (r > now_) {
        next = std::min(next, r);
        continue;
      }
      if (in.kind == MicroOpKind::Hmma) {
        if (!w.holds_slot || w.tensor_busy_until <= now_) {
          w.holds_slot = false;
          int holders = 0;
          std::int64_t earliest = kNever;
          for (Warp& o : warps_) {
            if (!o.holds_slot) continue;
            if (o.tensor_busy_until <= now_) {
              o.holds_slot = false;
              continue;
            }
            ++holders;
            earliest = std::min(earliest, o.tensor_busy_until);
          }
          if (holders >= cfg_.max_concurrent_tensor_warps) {
            next = std::min(next, earliest);
            continue;
          }
        }
        bool fits = true;
        for (int c = 0; c < in.reg_cycles; ++c) {
          auto it = reg_use_.find(now_ + c);
          if ((it == reg_use_.end() ? 0 : it->second) + in.reg_bits_per_cycle > reg_budget_) fits = false;
        }
        if (!fits) {
          next = std::min(next, now_ + 1);
          continue;
        }
      }

      // issue
      const std::int64_t t = now_;
      const std::int64_t done = t + in.latency;
      for (int p : in.dst) {
        w.pair_ready[p] = done;
        w.pair_chain[p] = in.chain;
      }
      w.next_any = t + 1;
      w.last_issue = t;
      w.done = std::max(w.done, done);
      if (in.kind == MicroOpKind::Hmma) {
        if (w.last_hmma >= 0) {
          const std::int64_t gap = t - w.last_hmma;
          report_.min_hmma_issue_gap =
              report_.min_hmma_issue_gap < 0 ? gap : std::min(report_.min_hmma_issue_gap, gap);
        }
        w.last_hmma = t;
        w.next_hmma = t + in.interval;
        w.tensor_busy_until = std::max(w.tensor_busy_until, done);
        w.holds_slot = true;
        for (int c = 0; c < in.reg_cycles; ++c) {
          const int used = reg_use_[t + c] += in.reg_bits_per_cycle;
          report_.peak_register_bits_per_cycle = std::max(report_.peak_register_bits_per_cycle, used);
        }
        // dot products spread evenly over the occupancy window
        for (int c = 0; c < in.occupancy; ++c) {
          const int share = in.fedp / in.occupancy + (c < in.fedp % in.occupancy ? 1 : 0);
          const int used = fedp_use_[t + c] += share;
          report_.peak_fedp_per_cycle = std::max(report_.peak_fedp_per_cycle, used);
        }
        int holders = 0;
        for (const Warp& o : warps_) holders += o.holds_slot && o.tensor_busy_until > t;
        report_.peak_tensor_warps = std::max(report_.peak_tensor_warps, holders);
        ++report_.hmma;
        report_.fedp_total += in.fedp;
      } else if (in.kind == MicroOpKind::Load) {
        ++report_.loads;
      } else {
        ++report_.stores;
      }
      if (in.fence_after) w.drain_until = w.done;
      ++report_.instructions;
      report_.total_cycles = std::max(report_.total_cycles, done);
      if (record_) report_.records.push_back(IssueRecord{id, in.tag, in.kind, t, done});
      w.queue.pop_front();
      issued = true;
    }
    if (issued) next = std::min(next, now_ + 1);
    if (next == kNever) throw std::logic_error("scheduler stalled with pending work");
    now_ = next;
    reg_use_.erase(reg_use_.begin(), reg_use_.lower_bound(now_));
    fedp_use_.erase(fedp_use_.begin(), fedp_use_.lower_bound(now_));
  }
}

CycleReport Scheduler::finish() {
  for (Warp& w : warps_) w.closed = true;
  advance(true);
  const double capacity = static_cast<double>(cfg_.tensor_cores_per_sm) * cfg_.fedp_units_per_core;
  report_.fedp_utilization =
      report_.total_cycles > 0 ? report_.fedp_total / (capacity * report_.total_cycles) : 0.0;
  return report_;
}

CycleReport schedule(const std::vector<std::vector<MicroOp>>& warps, const TimingConfig& cfg,
                     bool record) {
  Scheduler s(cfg, static_cast<int>(warps.size()), record);
  for (std::size_t w = 0; w < warps.size(); ++w)
    for (std::size_t i = 0; i < warps[w].size(); ++i) {
      TimedInstr t = lower(warps[w][i], cfg);
      t.tag = static_cast<std::int64_t>(i);
      s.push(static_cast<int>(w), std::move(t));
    }
  return s.finish();
}

}  // namespace tcsim
