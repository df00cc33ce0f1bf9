#pragma once

// Functional WMMA execution: decomposition of one wmma.mma into HMMA
// micro-ops, per-op subtile arithmetic over warp registers, and wmma.load /
// wmma.store data movement driven by the fragment maps.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tcsim/mapping.hpp"
#include "tcsim/numerics.hpp"

namespace tcsim {

struct MmaConfig {
  Arch arch = Arch::Volta;
  TileShape shape = kM16N16K16;
  ElemType ab_type = ElemType::F16;
  ElemType ctype = ElemType::F32;
  ElemType dtype = ElemType::F32;
  Layout a_layout = Layout::RowMajor;
  Layout b_layout = Layout::ColMajor;
  bool satfinite = false;
  FedpRounding rounding = FedpRounding::Terminal;

  // FP16 only when both C and D are f16; any f32 side accumulates in binary32.
  PrecisionMode mode() const;
  FragmentKey key(Operand op, Layout cd_layout = Layout::RowMajor) const;

  friend auto operator<=>(const MmaConfig&, const MmaConfig&) = default;
  friend bool operator==(const MmaConfig&, const MmaConfig&) = default;
};

std::string to_string(const MmaConfig& c);

// Throws UnsupportedFeature for combinations the hardware lacks.
void validate(const MmaConfig& c);

// alayout x blayout x dtype x ctype x satfinite for Volta m16n16k16.
std::vector<MmaConfig> volta_mma_configs();

// One threadgroup's (or, on Turing, the whole warp's) share of an HMMA op.
// Output subtile = a's rows x b's cols; K range = a's cols = b's rows.
struct WorkItem {
  int threadgroup = -1;  // -1 on Turing
  Rect a;
  Rect b;
  std::string label;  // Volta: "a[0:1]xA" style octet notation

  Rect out() const { return Rect{a.row0, a.row1, b.col0, b.col1}; }
  friend bool operator==(const WorkItem&, const WorkItem&) = default;
};

struct HmmaOp {
  Arch arch = Arch::Volta;
  PrecisionMode mode = PrecisionMode::MixedFP32Acc;
  TileShape shape = kM16N16K16;
  int set = 1;    // 1..4
  int step = -1;  // 0..3 on Volta, -1 on Turing
  std::vector<WorkItem> work;

  // Four-element dot products performed by the op across the warp.
  int fedp_count() const;
};

int volta_steps_per_set(PrecisionMode mode);

WorkItem volta_step_work(int set, int step, int threadgroup, PrecisionMode mode);
WorkItem turing_set_work(int set, PrecisionMode mode, TileShape shape);
std::vector<HmmaOp> decompose_wmma_mma(Arch arch, TileShape shape, PrecisionMode mode);

// Flat byte-addressed memory.
class Memory {
 public:
  explicit Memory(std::size_t bytes = 0) : bytes_(bytes, 0) {}

  std::size_t size() const { return bytes_.size(); }
  void resize(std::size_t bytes) { bytes_.resize(bytes, 0); }
  std::span<std::uint8_t> bytes() { return bytes_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

  // `bits` is 4, 8, 16 or 32; sub-byte values use the low nibble first.
  std::uint32_t read_bits(std::uint64_t bit_addr, int bits) const;
  void write_bits(std::uint64_t bit_addr, int bits, std::uint32_t value);

 private:
  void check(std::uint64_t bit_addr, int bits) const;
  std::vector<std::uint8_t> bytes_;
};

struct FragmentRef {
  const FragmentMap* map = nullptr;
  int base_reg = 0;

  bool bound() const { return map != nullptr; }
};

struct MmaOperands {
  FragmentRef a, b, c, d;
};

class WarpState {
 public:
  static constexpr int kRegs = 256;
  static constexpr int kMaxAccElems = 8;

  WarpState();

  std::uint32_t reg(int lane, int r) const { return regs_[lane][r]; }
  void set_reg(int lane, int r, std::uint32_t v) { regs_[lane][r] = v; }

  // Raw bits of fragment element `e` of `lane`.
  std::uint32_t elem(const FragmentRef& f, int lane, int e) const;
  void set_elem(const FragmentRef& f, int lane, int e, std::uint32_t bits);

  // Per-lane running accumulator of the mma in flight, indexed by D element.
  // Holds binary32 bits, binary16 bits or an exact 64-bit integer sum.
  std::array<std::array<std::int64_t, kMaxAccElems>, kWarpSize> acc{};
  std::array<std::uint8_t, kWarpSize> acc_live{};

 private:
  std::vector<std::array<std::uint32_t, kRegs>> regs_;
};

// A compiled wmma.mma: the op list plus, per op, the exact register reads
// and writes every output element needs. Sources are resolved inside the
// threadgroup's octet on Volta.
class MmaProgram {
 public:
  struct Source {
    std::uint8_t lane;
    std::uint8_t reg;    // relative to the fragment base
    std::uint8_t shift;  // bit offset inside the register
  };
  struct Item {
    Source d;
    Source c;
    std::uint8_t d_lane;
    std::uint8_t d_elem;
    std::uint8_t chunks;  // K range / 4
    std::uint32_t first;  // index into a_src / b_src (4 per chunk)
  };
  struct OpPlan {
    std::vector<Item> items;
    std::vector<Source> a_src;
    std::vector<Source> b_src;
    // Registers (relative to fragment bases) each operand touches across
    // the warp, ascending. c_regs covers the C reads of first-touch elements;
    // acc_regs the D registers re-read as accumulator input.
    std::vector<int> a_regs, b_regs, c_regs, acc_regs, d_regs;
  };

  explicit MmaProgram(const MmaConfig& cfg,
                      const MappingSet& maps = MappingSet::builtin());

  const MmaConfig& config() const { return cfg_; }
  PrecisionMode mode() const { return mode_; }
  const std::vector<HmmaOp>& ops() const { return ops_; }
  const OpPlan& plan(int op) const { return plans_.at(op); }
  const FragmentMap& map(Operand op) const { return *maps_[static_cast<int>(op)]; }

 private:
  MmaConfig cfg_;
  PrecisionMode mode_;
  std::vector<HmmaOp> ops_;
  std::vector<OpPlan> plans_;
  std::array<const FragmentMap*, 4> maps_{};
};

// Start a new mma: every D element will seed from C on first touch.
void begin_mma(WarpState& state);

// Execute op `op_index` of `prog`. Ops of one mma must follow begin_mma.
void execute_hmma(WarpState& state, const MmaProgram& prog, int op_index,
                  const MmaOperands& operands);

// begin_mma followed by every op in decomposition order.
void execute_wmma_mma(WarpState& state, const MmaProgram& prog,
                      const MmaOperands& operands);

// Fill `dst` from memory. For A/B the fragment's layout must equal `layout`.
void execute_wmma_load(WarpState& state, const FragmentRef& dst,
                       const Memory& mem, std::uint64_t base, int stride,
                       Layout layout);

// Write `src` to memory; where an element has two owners the lower
// threadgroup's copy is stored.
void execute_wmma_store(const WarpState& state, const FragmentRef& src,
                        Memory& mem, std::uint64_t base, int stride,
                        Layout layout);

// True when every duplicated element (Volta A/B) holds identical bits in
// all of its owner lanes.
bool duplicates_consistent(const WarpState& state, const FragmentRef& f);

}  // namespace tcsim
