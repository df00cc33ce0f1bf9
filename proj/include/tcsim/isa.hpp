#pragma once

// WMMA PTX subset: parsing, printing, and expansion into machine-level
// micro-ops (typed per-lane loads/stores and register-pair HMMA ops), plus
// the warp coalescing counter.
//
// Accepted forms (qualifiers in this order; .aligned and the state space
// are optional):
//   wmma.load.{a,b,c}.sync.aligned.<layout>.<shape>[.global|.shared].<type> F, [addr]{, stride};
//   wmma.store.d.sync.aligned.<layout>.<shape>[.global|.shared].<type> [addr], F{, stride};
//   wmma.mma.sync.aligned.<alayout>.<blayout>.<shape>.<dtype>.<ctype>[.satfinite] D, A, B, C;
//   wmma.mma.sync.aligned.<alayout>.<blayout>.<shape>.s32.<atype>.<btype>.s32[.satfinite] D, A, B, C;
// F is a fragment name or a brace list of registers; a trailing ".reuse" on
// an mma source is kept as an annotation. addr is [name] or [name+offset].

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcsim/engine.hpp"
#include "tcsim/mapping.hpp"

namespace tcsim {

enum class WmmaKind { LoadA, LoadB, LoadC, Mma, StoreD };

std::string_view to_string(WmmaKind k);  // "load.a", ..., "mma", "store.d"

struct FragOperand {
  std::string name;               // empty when a brace list is used
  std::vector<std::string> regs;  // brace list entries
  bool reuse = false;

  // Canonical text: the name, or "{r0, r1, ...}".
  std::string text() const;
  friend bool operator==(const FragOperand&, const FragOperand&) = default;
};

struct AddrOperand {
  std::string base;
  std::int64_t offset = 0;

  std::string text() const;  // "[A]" or "[A+64]"
  friend bool operator==(const AddrOperand&, const AddrOperand&) = default;
};

struct PtxWmmaInstr {
  WmmaKind kind = WmmaKind::Mma;
  bool aligned = false;
  std::string space;  // "", "global" or "shared"
  TileShape shape = kM16N16K16;

  // load/store
  Layout layout = Layout::RowMajor;
  ElemType type = ElemType::F16;
  AddrOperand addr;
  std::optional<int> stride;

  // mma
  Layout a_layout = Layout::RowMajor;
  Layout b_layout = Layout::ColMajor;
  ElemType dtype = ElemType::F32;
  ElemType ctype = ElemType::F32;
  ElemType ab_type = ElemType::F16;
  bool satfinite = false;

  // load: {dst}; store: {src}; mma: {d, a, b, c}
  std::vector<FragOperand> frags;

  Operand operand() const;  // A/B/C for loads, D for stores
  int effective_stride() const;
  MmaConfig mma_config(Arch arch) const;
  FragmentKey fragment_key(Arch arch) const;  // loads and stores

  friend bool operator==(const PtxWmmaInstr&, const PtxWmmaInstr&) = default;
};

// One instruction without trailing comment. Throws ParseError with the
// column of the offending token; `line` is attached to the error.
PtxWmmaInstr parse_wmma(std::string_view text, std::size_t line = 0);
std::string print(const PtxWmmaInstr& instr);

// Register pair <id, id-1>; the higher id is the one encoded.
struct RegisterPair {
  int encoded = 0;

  int high() const { return encoded; }
  int low() const { return encoded - 1; }
  std::string text() const { return "R" + std::to_string(encoded); }
  friend bool operator==(const RegisterPair&, const RegisterPair&) = default;
};

// Pair holding register r when fragments start at odd registers.
RegisterPair pair_of(int reg);

enum class MicroOpKind { Load, Store, Hmma };

struct LaneAddr {
  std::uint8_t lane;
  std::uint64_t addr;
  friend bool operator==(const LaneAddr&, const LaneAddr&) = default;
};

struct MicroOp {
  MicroOpKind kind = MicroOpKind::Hmma;
  int instr = 0;  // index of the originating PTX instruction
  WmmaKind source = WmmaKind::Mma;

  // memory
  int width_bits = 0;
  std::vector<LaneAddr> lanes;
  int transactions = 0;  // filled by the expander with the coalesced count
  bool fence_after = false;

  // HMMA
  Arch arch = Arch::Volta;
  TileShape shape = kM16N16K16;
  PrecisionMode mode = PrecisionMode::MixedFP32Acc;
  int set = 0;
  int step = -1;
  int fedp = 0;
  int chain = -1;  // ops of one wmma.mma share a chain id
  std::array<RegisterPair, 4> operands{};  // D, A, B, C
  std::array<bool, 4> reuse{};

  // scoreboard view, encoded pair ids
  std::vector<int> src_pairs;
  std::vector<int> dst_pairs;

  // "LD128", "ST32", "HMMA"
  std::string mnemonic() const;
};

// One line per micro-op:
//   LD128 i=0 tx=4 lanes=0:0x0,1:0x20,...
//   HMMA.884.F32.F32.STEP0 i=2 set=1 R10, R2, R6, R18
std::string format_microop(const MicroOp& op);

struct Transaction {
  std::uint64_t sector_addr = 0;
  std::uint32_t lane_mask = 0;
  friend bool operator==(const Transaction&, const Transaction&) = default;
};

// One transaction per distinct sector touched, ascending by address.
std::vector<Transaction> coalesce(const std::vector<LaneAddr>& lanes, int width_bits,
                                  int sector_bytes = 32);

// Assigns fragment names to register ranges in first-use order. Every
// fragment starts at an odd register and occupies an even count, so register
// pairs never straddle two fragments.
class RegisterAllocator {
 public:
  explicit RegisterAllocator(int first = 1);

  int allocate(const std::string& name, int regs);
  std::optional<int> find(const std::string& name) const;
  int next() const { return next_; }

 private:
  int next_;
  std::map<std::string, std::pair<int, int>> regs_;  // name -> (base, count)
};

// Memory micro-ops of a fragment load/store at absolute byte address `base`.
// Lane accesses of equal index and width form one micro-op.
std::vector<MicroOp> expand_load(const PtxWmmaInstr& instr, Arch arch, std::uint64_t base,
                                 int first_reg, const MappingSet& maps = MappingSet::builtin(),
                                 int sector_bytes = 32);
std::vector<MicroOp> expand_store(const PtxWmmaInstr& instr, Arch arch, std::uint64_t base,
                                  int first_reg, const MappingSet& maps = MappingSet::builtin(),
                                  int sector_bytes = 32);

// HMMA micro-ops of a compiled mma with fragment bases for D, A, B, C.
std::vector<MicroOp> expand_mma(const MmaProgram& prog, std::array<int, 4> bases,
                                int chain, int instr = 0,
                                std::array<bool, 4> reuse = {});

}  // namespace tcsim
