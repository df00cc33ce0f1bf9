#pragma once

// Cycle model of the tensor-core pipeline: per-op latencies calibrated to the
// measured cumulative set latencies, in-order issue per warp, a per-SM cap on
// warps with tensor work in flight, register-port bandwidth, and a pair-level
// scoreboard.

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tcsim/isa.hpp"

namespace tcsim {

struct TimingConfig {
  int pipeline_stages = 4;
  int fedp_units_per_core = 16;
  int tensor_cores_per_sm = 8;
  int tensor_cores_per_warp = 2;
  int initiation_interval = 2;
  int max_concurrent_tensor_warps = 4;
  int alu_ports_per_sm = 128;
  int register_bits = 32;
  int source_operands = 3;
  int load_latency = 125;
  int store_latency = 120;
  int sector_bytes = 32;
  int register_base = 1;
  bool store_drains = true;  // a warp waits for its stores before continuing

  // Cumulative cycles to finish all HMMAs up to each set, keyed
  // "<arch>.<shape>.<mode>", e.g. "turing.m16n16k16.mixed".
  std::map<std::string, std::vector<int>> set_cycles;

  static TimingConfig defaults();
  // "key = value" lines, '#' comments. Keys not given keep their defaults.
  static TimingConfig load(std::istream& in);
  static TimingConfig load_file(const std::string& path);
  void write(std::ostream& out) const;

  // Throws ContractViolation when an invariant is broken.
  void validate() const;

  friend bool operator==(const TimingConfig&, const TimingConfig&) = default;
};

std::string latency_key(Arch arch, TileShape shape, PrecisionMode mode);

std::vector<int> set_completion_cycles(Arch arch, TileShape shape, PrecisionMode mode,
                                       const TimingConfig& cfg);
int wmma_mma_latency(Arch arch, TileShape shape, PrecisionMode mode, const TimingConfig& cfg);

// Cycles a warp's two tensor cores are busy with an op of `fedp` dot
// products, and the resulting minimum spacing to the warp's next HMMA.
int hmma_occupancy(int fedp, const TimingConfig& cfg);
int hmma_issue_interval(int fedp, const TimingConfig& cfg);

// Issue-to-completion latency of every HMMA in `set`.
int hmma_op_latency(Arch arch, TileShape shape, PrecisionMode mode, int set,
                    const TimingConfig& cfg);

struct RegisterBandwidth {
  int bits_per_window = 0;  // one HMMA's source operand fetch for the warp
  int window_cycles = 0;
  int bits_per_core_per_cycle = 0;
  int supply_per_core_per_cycle = 0;
  int sm_budget_per_cycle = 0;
};

RegisterBandwidth register_bandwidth_demand(const TimingConfig& cfg);

struct TimedInstr {
  MicroOpKind kind = MicroOpKind::Hmma;
  int latency = 1;
  int interval = 1;      // cycles before the warp's next HMMA may issue
  int occupancy = 1;     // cycles the warp's tensor cores are busy
  int fedp = 0;
  int reg_bits_per_cycle = 0;
  int reg_cycles = 0;
  int chain = -1;
  bool fence_after = false;
  std::vector<int> src;  // encoded register pairs
  std::vector<int> dst;
  std::int64_t tag = 0;  // caller's id, copied into IssueRecord
};

TimedInstr lower(const MicroOp& op, const TimingConfig& cfg);

struct IssueRecord {
  int warp = 0;
  std::int64_t tag = 0;
  MicroOpKind kind = MicroOpKind::Hmma;
  std::int64_t issue = 0;
  std::int64_t complete = 0;
};

struct CycleReport {
  std::int64_t total_cycles = 0;
  std::int64_t instructions = 0;
  std::int64_t hmma = 0;
  std::int64_t loads = 0;
  std::int64_t stores = 0;
  std::int64_t fedp_total = 0;
  double fedp_utilization = 0.0;  // fedp_total / (total_cycles * SM FEDP capacity)
  int peak_tensor_warps = 0;
  int peak_fedp_per_cycle = 0;
  int peak_register_bits_per_cycle = 0;
  std::int64_t min_hmma_issue_gap = -1;  // smallest same-warp HMMA spacing seen
  std::vector<IssueRecord> records;      // filled when recording is enabled
};

// Streaming scheduler for one SM. Instructions are pushed per warp; issue
// proceeds as far as the known instructions allow.
class Scheduler {
 public:
  Scheduler(const TimingConfig& cfg, int warps, bool record = false);

  void push(int warp, TimedInstr instr);
  // Declare that `warp` will receive no further instructions.
  void close(int warp);
  CycleReport finish();

 private:
  struct Warp {
    std::deque<TimedInstr> queue;
    bool closed = false;
    std::int64_t next_any = 0;
    std::int64_t next_hmma = 0;
    std::int64_t drain_until = 0;
    std::int64_t last_issue = -1;
    std::int64_t last_hmma = -1;
    std::int64_t tensor_busy_until = 0;
    std::int64_t done = 0;
    bool holds_slot = false;
    std::vector<std::int64_t> pair_ready;
    std::vector<int> pair_chain;
  };

  void advance(bool final);
  std::int64_t ready_time(const Warp& w, const TimedInstr& in) const;

  TimingConfig cfg_;
  int reg_budget_;
  bool record_;
  std::vector<Warp> warps_;
  std::int64_t now_ = 0;
  std::map<std::int64_t, int> reg_use_;
  std::map<std::int64_t, int> fedp_use_;
  CycleReport report_;
};

CycleReport schedule(const std::vector<std::vector<MicroOp>>& warps, const TimingConfig& cfg,
                     bool record = false);

}  // namespace tcsim
