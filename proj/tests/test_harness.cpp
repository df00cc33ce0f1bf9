#include <cstring>
#include <sstream>

#include "doctest.h"
#include "tcsim/error.hpp"
#include "tcsim/harness.hpp"

using namespace tcsim;

namespace {

GenSpec spec(GenKind k, std::uint64_t seed = 0, int stream = 0) {
  GenSpec g;
  g.kind = k, g.seed = seed, g.stream = stream;
  return g;
}

GemmJob job_of(const MmaConfig& cfg, int m, int n, int k, std::uint64_t seed = 1) {
  GemmJob j;
  j.mma = cfg;
  j.m = m, j.n = n, j.k = k;
  j.seed = seed;
  return j;
}

MmaConfig turing(ElemType ab, ElemType cd, TileShape s) {
  MmaConfig c;
  c.arch = Arch::Turing;
  c.shape = s;
  c.ab_type = ab;
  c.ctype = c.dtype = cd;
  return c;
}

const char* kFiveInstr = R"(// five-instruction WMMA kernel
.arch volta
.region A 512
.region B 512
.region C 1024
.region D 1024
.matrix A f16 16 16 row 16 random 3 0
.matrix B f16 16 16 col 16 random 3 1
.matrix C f32 16 16 row 16 random 3 2
entry:
  wmma.load.a.sync.aligned.row.m16n16k16.f16 ra, [A], 16;
  wmma.load.b.sync.aligned.col.m16n16k16.f16 rb, [B], 16;
  wmma.load.c.sync.aligned.row.m16n16k16.f32 rc, [C], 16;
  wmma.mma.sync.aligned.row.col.m16n16k16.f32.f32 rd, ra, rb, rc;
  wmma.store.d.sync.aligned.row.m16n16k16.f32 [D], rd, 16;
.dump D
)";

}  // namespace

TEST_CASE("random generation is positional") {
  const GenSpec g = spec(GenKind::Random, 42, 0);
  const Matrix big = generate(ElemType::F16, 40, 40, g);
  const Matrix small = generate(ElemType::F16, 40, 40, g);
  CHECK(big == small);
  const Matrix s8 = generate(ElemType::S8, 64, 64, g);
  int lo = 0, hi = 0;
  for (auto b : s8.bits) {
    const double v = element_value(b, ElemType::S8);
    CHECK(v >= -128);
    CHECK(v <= 127);
    lo += v == -128, hi += v == 127;
  }
  CHECK(lo > 0);
  CHECK(hi > 0);
  CHECK(positional_uniform(1, 0, 3, 4) != positional_uniform(1, 1, 3, 4));
}

TEST_CASE("small GEMMs match the reference in every mode") {
  std::vector<MmaConfig> cfgs = volta_mma_configs();
  cfgs.push_back(turing(ElemType::F16, ElemType::F32, kM32N8K16));
  cfgs.push_back(turing(ElemType::F16, ElemType::F16, kM8N32K16));
  cfgs.push_back(turing(ElemType::S8, ElemType::S32, kM16N16K16));
  cfgs.push_back(turing(ElemType::U8, ElemType::S32, kM8N32K16));
  cfgs.push_back(turing(ElemType::S4, ElemType::S32, kM8N8K32));
  for (const MmaConfig& cfg : cfgs) {
    CAPTURE(to_string(cfg));
    for (Layout cl : {Layout::RowMajor, Layout::ColMajor}) {
      GemmJob j = job_of(cfg, 33, 20, 40, 11);
      j.c_layout = cl;
      const RunReport r = run_gemm(j);
      REQUIRE(r.verified);
      CHECK(r.mismatches == 0);
      CHECK(r.d.rows == 33);
      CHECK(r.cycles.total_cycles > 0);
    }
  }
}

TEST_CASE("identity GEMM returns B") {
  // trace form so A can be the identity
  std::ostringstream t;
  t << ".arch volta\n.region A 512\n.region B 512\n.region C 1024\n.region D 1024\n"
    << ".matrix A f16 16 16 row 16 identity 0 0\n.matrix B f16 16 16 col 16 random 8 1\n"
    << "wmma.load.a.sync.aligned.row.m16n16k16.f16 a, [A], 16;\n"
    << "wmma.load.b.sync.aligned.col.m16n16k16.f16 b, [B], 16;\n"
    << "wmma.load.c.sync.aligned.row.m16n16k16.f32 c, [C], 16;\n"
    << "wmma.mma.sync.aligned.row.col.m16n16k16.f32.f32 d, a, b, c;\n"
    << "wmma.store.d.sync.aligned.row.m16n16k16.f32 [D], d, 16;\n.dump D\n";
  std::istringstream in(t.str());
  const RunReport r = run_trace(in);
  const Matrix b = generate(ElemType::F16, 16, 16, spec(GenKind::Random, 8, 1));
  const auto& d = r.dumps.at("D");
  for (int i = 0; i < 16; ++i)
    for (int c = 0; c < 16; ++c) {
      float f;
      std::memcpy(&f, d.data() + 4 * (i * 16 + c), 4);
      CHECK(f == element_value(b.at(i, c), ElemType::F16));
    }
  // cycles: the four memory instructions, the mma and the drained store
  CHECK(r.cycles.total_cycles > 54 + 125);
}

TEST_CASE("trace of the five-instruction kernel") {
  std::istringstream in(kFiveInstr);
  const RunReport r = run_trace(in, TimingConfig::defaults(), MappingSet::builtin(), true);
  CHECK(r.counts.at("HMMA") == 16);
  CHECK(r.counts.at("LD128") == 4);
  CHECK(r.counts.at("LD32") == 8);
  CHECK(r.counts.at("ST32") == 8);
  CHECK(r.counts.at("wmma.mma") == 1);
  CHECK(r.dumps.at("D").size() == 1024);
  CHECK(r.microops.size() == 36);
  CHECK(r.cycles.records.size() == 36);
}

TEST_CASE("trace edge cases") {
  std::istringstream empty("");
  const RunReport r = run_trace(empty);
  CHECK(r.cycles.total_cycles == 0);
  CHECK(r.counts.empty());

  std::istringstream bad(".arch volta\n.region A 512\nwmma.load.a.sync.row.m16n16k16.f16 a [A], 16;\n");
  try {
    run_trace(bad);
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  std::istringstream unbound(".region A 512\nwmma.load.a.sync.row.m16n16k16.f16 a, [Z], 16;\n");
  CHECK_THROWS_AS(run_trace(unbound), TraceError);
  std::istringstream oob(".region A 256\nwmma.load.a.sync.row.m16n16k16.f16 a, [A+128], 16;\n");
  CHECK_THROWS_AS(run_trace(oob), TraceError);
  std::istringstream late("nop\n.arch turing\n");
  CHECK_THROWS_AS(run_trace(late), TraceError);
  std::istringstream nofrag(".region D 1024\nwmma.store.d.sync.row.m16n16k16.f32 [D], x, 16;\n");
  CHECK_THROWS_AS(run_trace(nofrag), TraceError);
  std::istringstream volta_int(".region A 512\nwmma.load.a.sync.row.m16n16k16.s8 a, [A], 16;\n");
  CHECK_THROWS_AS(run_trace(volta_int), TraceError);
}

TEST_CASE("emitted trace reproduces run_gemm exactly") {
  const MmaConfig cfgs[] = {MmaConfig{}, turing(ElemType::U4, ElemType::S32, kM8N8K32),
                            turing(ElemType::F16, ElemType::F16, kM32N8K16)};
  for (const MmaConfig& cfg : cfgs) {
    CAPTURE(to_string(cfg));
    GemmJob j = job_of(cfg, 24, 40, 48, 5);
    j.c_layout = Layout::ColMajor;
    j.record = true;
    const RunReport g = run_gemm(j);
    std::istringstream in(emit_gemm_trace(j));
    const RunReport t = run_trace(in, TimingConfig::defaults(), MappingSet::builtin(), true);
    CHECK(t.dumps.at("D") == g.dumps.at("D"));
    CHECK(t.cycles.total_cycles == g.cycles.total_cycles);
    CHECK(t.microops == g.microops);
  }
}

TEST_CASE("sample traces run") {
  for (const char* name : {"volta_mixed_32x32x32.ptx", "turing_int8_m32n8k16.ptx"}) {
    const RunReport r = run_trace_file(std::string(TCSIM_TRACE_DIR) + "/" + name);
    CHECK(r.cycles.hmma > 0);
    CHECK(r.dumps.count("D") == 1);
  }
  CHECK_THROWS_AS(run_trace_file("/nonexistent.ptx"), Error);
}

TEST_CASE("cycles scale with the number of output tiles") {
  const MmaConfig cfg;
  const std::int64_t one = run_gemm(job_of(cfg, 16, 16, 64)).cycles.total_cycles;
  for (auto [m, n] : {std::pair{32, 16}, {16, 48}, {64, 64}}) {
    GemmJob j = job_of(cfg, m, n, 64);
    j.verify = false;
    CHECK(run_gemm(j).cycles.total_cycles == one * (m / 16) * (n / 16));
  }
}

TEST_CASE("GEMM arguments are checked") {
  CHECK_THROWS_AS(run_gemm(job_of(MmaConfig{}, 0, 16, 16)), ContractViolation);
  MmaConfig bad;
  bad.ab_type = ElemType::S8;
  CHECK_THROWS_AS(run_gemm(job_of(bad, 16, 16, 16)), UnsupportedFeature);
}
