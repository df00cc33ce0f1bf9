#pragma once

// Tiled GEMM driver, PTX-subset trace runner and the reference GEMM.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tcsim/engine.hpp"
#include "tcsim/isa.hpp"
#include "tcsim/timing.hpp"

namespace tcsim {

// Dense matrix of raw element bit patterns, row-major in memory of the host.
// Integers are stored two's complement, masked to the element width.
struct Matrix {
  ElemType type = ElemType::F16;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint32_t> bits;

  Matrix() = default;
  Matrix(ElemType t, int r, int c) : type(t), rows(r), cols(c), bits(std::size_t(r) * c, 0) {}

  std::uint32_t& at(int r, int c) { return bits[std::size_t(r) * cols + c]; }
  std::uint32_t at(int r, int c) const { return bits[std::size_t(r) * cols + c]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Numeric value of one element (NaN for float NaNs).
double element_value(std::uint32_t bits, ElemType t);
// Round `v` into type `t` (binary16 RNE, binary32, or clamped integer).
std::uint32_t encode_value(double v, ElemType t);

enum class GenKind { Zero, Identity, Iota, Random };

struct GenSpec {
  GenKind kind = GenKind::Zero;
  std::uint64_t seed = 0;
  int stream = 0;
  std::optional<double> lo, hi;  // default range depends on the type
};

std::uint64_t splitmix64(std::uint64_t x);
// Uniform [0,1) value that depends only on (seed, stream, row, col).
double positional_uniform(std::uint64_t seed, int stream, int row, int col);
void default_range(ElemType t, double& lo, double& hi);
Matrix generate(ElemType t, int rows, int cols, const GenSpec& gen);

// Element-wise copy between a host matrix and memory with leading dimension ld.
void store_matrix(Memory& mem, std::uint64_t base, const Matrix& m, Layout layout, int ld);
Matrix load_matrix(const Memory& mem, std::uint64_t base, ElemType t, int rows, int cols,
                   Layout layout, int ld);

// Reference D = A x B + C under the accumulation contract, processed in K
// tiles of cfg.shape.k with C of later tiles equal to the previous tile's D.
// K must be a multiple of the tile's K.
Matrix oracle_gemm(const Matrix& a, const Matrix& b, const Matrix& c, const MmaConfig& cfg);

struct TransactionStats {
  std::int64_t instructions = 0;
  std::int64_t micro_ops = 0;
  std::int64_t transactions = 0;
  std::int64_t bytes = 0;
};

struct RunReport {
  bool verified = false;
  bool pass = true;
  std::int64_t mismatches = 0;
  double max_abs_diff = 0.0;
  CycleReport cycles;
  std::map<std::string, TransactionStats> transactions;  // by load.a/load.b/load.c/store.d
  std::map<std::string, std::int64_t> counts;             // PTX kinds and micro-op mnemonics
  std::vector<std::string> microops;                      // when recording; IssueRecord::tag indexes it
  std::map<std::string, std::vector<std::uint8_t>> dumps;
  Matrix d;  // run_gemm: the M x N result
};

// Executes WMMA instructions for one warp against a flat memory: functional
// effects through the engine, micro-op expansion and cycle scheduling.
class WarpExecutor {
 public:
  WarpExecutor(Arch arch, const TimingConfig& cfg, const MappingSet& maps, bool timing,
               bool record);
  ~WarpExecutor();

  Arch arch() const { return arch_; }
  Memory& memory() { return mem_; }
  WarpState& state() { return state_; }

  // `addr` is the resolved byte address of a load/store (ignored for mma).
  void execute(const PtxWmmaInstr& instr, std::uint64_t addr);
  void nop() { ++report_.counts["nop"]; }
  RunReport& report() { return report_; }
  RunReport finish();

 private:
  const FragmentRef& fragment(const FragOperand& f) const;
  const MmaProgram& program(const MmaConfig& cfg);
  void account(const PtxWmmaInstr& instr, std::vector<MicroOp>& ops);

  Arch arch_;
  TimingConfig cfg_;
  const MappingSet& maps_;
  bool timing_;
  bool record_;
  Memory mem_;
  WarpState state_;
  RegisterAllocator alloc_;
  std::map<std::string, FragmentRef> frags_;
  std::map<MmaConfig, std::unique_ptr<MmaProgram>> programs_;
  std::unique_ptr<Scheduler> sched_;
  int instr_ = 0;
  int chain_ = 0;
  RunReport report_;
};

struct GemmJob {
  MmaConfig mma;
  Layout c_layout = Layout::RowMajor;
  int m = 16, n = 16, k = 16;
  std::uint64_t seed = 1;
  std::optional<double> lo, hi;  // floating input range, default [-2, 2]
  bool verify = true;
  bool timing = true;
  bool record = false;
};

// Memory image of a GEMM: four 256-byte aligned regions A, B, C, D.
struct GemmLayout {
  int mp = 0, np = 0, kp = 0;  // padded to tile multiples
  int lda = 0, ldb = 0, ldc = 0;
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  std::uint64_t a_bytes = 0, b_bytes = 0, c_bytes = 0, d_bytes = 0;
  std::uint64_t total = 0;
};

GemmLayout gemm_layout(const GemmJob& job);

// The tile-level instruction stream: per output tile load.c, then per K tile
// load.a, load.b and mma (accumulators alternate between two fragments),
// then store.d. Addresses are region-relative offsets.
void for_each_gemm_instr(const GemmJob& job,
                         const std::function<void(const PtxWmmaInstr&, char region,
                                                  std::uint64_t offset)>& fn);

RunReport run_gemm(const GemmJob& job, const TimingConfig& cfg = TimingConfig::defaults(),
                   const MappingSet& maps = MappingSet::builtin());

// Trace text equivalent to run_gemm(job).
std::string emit_gemm_trace(const GemmJob& job);

// Trace files: one instruction or directive per line, "//" comments.
//   .arch volta|turing
//   .region NAME BYTES
//   .matrix NAME TYPE ROWS COLS row|col LD zero|identity|iota|random SEED STREAM [LO HI]
//   .dump NAME
//   label:
//   nop
//   wmma...  with addresses [NAME] or [NAME+offset]
RunReport run_trace(std::istream& in, const TimingConfig& cfg = TimingConfig::defaults(),
                    const MappingSet& maps = MappingSet::builtin(), bool record = false);
RunReport run_trace_file(const std::string& path,
                         const TimingConfig& cfg = TimingConfig::defaults(),
                         const MappingSet& maps = MappingSet::builtin(), bool record = false);

}  // namespace tcsim
