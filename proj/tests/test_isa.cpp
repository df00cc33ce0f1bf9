#include <random>

#include "doctest.h"
#include "reference.hpp"
#include "tcsim/error.hpp"
#include "tcsim/isa.hpp"

using namespace tcsim;

namespace {

PtxWmmaInstr load_instr(WmmaKind kind, Layout layout, ElemType type, TileShape shape = kM16N16K16) {
  PtxWmmaInstr in;
  in.kind = kind;
  in.layout = layout;
  in.type = type;
  in.shape = shape;
  in.addr = AddrOperand{"p", 0};
  in.frags = {FragOperand{"f", {}, false}};
  return in;
}

std::map<std::string, int> mnemonics(const std::vector<MicroOp>& ops) {
  std::map<std::string, int> m;
  for (const MicroOp& op : ops) ++m[op.mnemonic()];
  return m;
}

}  // namespace

TEST_CASE("parse examples") {
  const PtxWmmaInstr a = parse_wmma("wmma.load.a.sync.row.m16n16k16.f16 {%r0, %r1, %r2, %r3}, [pa], 16;");
  CHECK(a.kind == WmmaKind::LoadA);
  CHECK(a.layout == Layout::RowMajor);
  CHECK(a.shape == kM16N16K16);
  CHECK(a.type == ElemType::F16);
  CHECK(a.stride == 16);
  CHECK(a.frags.at(0).regs.size() == 4);
  CHECK(a.addr.base == "pa");

  const PtxWmmaInstr m = parse_wmma("wmma.mma.sync.row.col.m16n16k16.f32.f32 rd, ra, rb, rc;");
  CHECK(m.kind == WmmaKind::Mma);
  CHECK(m.a_layout == Layout::RowMajor);
  CHECK(m.b_layout == Layout::ColMajor);
  CHECK(m.dtype == ElemType::F32);
  CHECK(m.ctype == ElemType::F32);
  CHECK(m.frags.size() == 4);

  const PtxWmmaInstr i = parse_wmma("wmma.mma.sync.aligned.row.col.m8n8k32.s32.u4.u4.s32.satfinite d, a, b, c;");
  CHECK(i.ab_type == ElemType::U4);
  CHECK(i.satfinite);
  CHECK(i.mma_config(Arch::Turing).mode() == PrecisionMode::Int4);

  const PtxWmmaInstr s = parse_wmma("wmma.store.d.sync.aligned.col.m32n8k16.global.f16 [D+64], acc, 8;");
  CHECK(s.kind == WmmaKind::StoreD);
  CHECK(s.space == "global");
  CHECK(s.addr.offset == 64);
}

TEST_CASE("parse errors carry line and column") {
  try {
    parse_wmma("wmma.load.a.sync.diag.m16n16k16.f16 a, [pa], 16;", 3);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.column() == 18);
  }
  CHECK_THROWS_AS(parse_wmma("wmma.load.a.sync.row.m16n16k16.f16 a, [pa], 16"), ParseError);
  CHECK_THROWS_AS(parse_wmma("wmma.mma.sync.row.col.m16n16k16.f32.f32 d, a, b;"), ParseError);
  CHECK_THROWS_AS(parse_wmma("wmma.load.a.sync.row.m16n16k16.f16 a.reuse, [pa];"), ParseError);
  CHECK_THROWS_AS(parse_wmma("wmma.load.q.sync.row.m16n16k16.f16 a, [pa];"), ParseError);
  CHECK_THROWS_AS(parse_wmma("wmma.load.a.sync.row.m16n16k16.f16 a, [pa], x;"), ParseError);
}

TEST_CASE("print and parse round trip") {
  const char* lines[] = {
      "wmma.load.a.sync.aligned.row.m16n16k16.f16 a, [A], 16;",
      "wmma.load.b.sync.col.m16n16k16.shared.f16 {r1, r2}, [B+32];",
      "wmma.load.c.sync.aligned.col.m32n8k16.f32 c, [C+16], 32;",
      "wmma.mma.sync.aligned.col.row.m16n16k16.f16.f32.satfinite d, a.reuse, b, c;",
      "wmma.mma.sync.aligned.row.col.m16n16k16.s32.s8.s8.s32 d, a, b, c;",
      "wmma.store.d.sync.aligned.row.m8n8k32.s32 [D], d, 8;",
  };
  for (const char* l : lines) {
    CAPTURE(l);
    const PtxWmmaInstr in = parse_wmma(l);
    CHECK(parse_wmma(print(in)) == in);
    CHECK(print(parse_wmma(print(in))) == print(in));
  }
}

TEST_CASE("register pairs") {
  CHECK(pair_of(1).encoded == 2);
  CHECK(pair_of(2).encoded == 2);
  CHECK(pair_of(2).low() == 1);
  RegisterAllocator alloc(1);
  CHECK(alloc.allocate("a", 8) == 1);
  CHECK(alloc.allocate("c", 3) == 9);
  CHECK(alloc.allocate("d", 4) == 13);
  CHECK(alloc.allocate("a", 8) == 1);
  CHECK_THROWS_AS(alloc.allocate("a", 9), ContractViolation);
}

TEST_CASE("load expansion widths") {
  const Arch V = Arch::Volta;
  CHECK(mnemonics(expand_load(load_instr(WmmaKind::LoadA, Layout::RowMajor, ElemType::F16), V, 0, 1)) ==
        std::map<std::string, int>{{"LD128", 2}});
  CHECK(mnemonics(expand_load(load_instr(WmmaKind::LoadA, Layout::ColMajor, ElemType::F16), V, 0, 1)) ==
        std::map<std::string, int>{{"LD64", 4}});
  CHECK(mnemonics(expand_load(load_instr(WmmaKind::LoadB, Layout::ColMajor, ElemType::F16), V, 0, 1)) ==
        std::map<std::string, int>{{"LD128", 2}});
  CHECK(mnemonics(expand_load(load_instr(WmmaKind::LoadB, Layout::RowMajor, ElemType::F16), V, 0, 1)) ==
        std::map<std::string, int>{{"LD64", 4}});
  CHECK(mnemonics(expand_load(load_instr(WmmaKind::LoadC, Layout::RowMajor, ElemType::F32), V, 0, 1)) ==
        std::map<std::string, int>{{"LD32", 8}});
  const auto st = expand_store(load_instr(WmmaKind::StoreD, Layout::RowMajor, ElemType::F32), V, 0, 1);
  CHECK(mnemonics(st) == std::map<std::string, int>{{"ST32", 8}});
  // misaligned base for a 128-bit run falls back to narrower accesses
  const auto odd = expand_load(load_instr(WmmaKind::LoadA, Layout::RowMajor, ElemType::F16), V, 8, 1);
  CHECK(mnemonics(odd) != std::map<std::string, int>{{"LD128", 2}});
  for (const MicroOp& op : odd)
    for (const LaneAddr& l : op.lanes) CHECK(l.addr % (op.width_bits / 8) == 0);
}

TEST_CASE("coalescing examples and brute force") {
  std::vector<LaneAddr> lanes;
  for (int l = 0; l < 32; ++l) lanes.push_back({std::uint8_t(l), std::uint64_t(256 + 4 * l)});
  CHECK(coalesce(lanes, 32).size() == 4);
  for (auto& l : lanes) l.addr = 512;
  const auto one = coalesce(lanes, 32);
  REQUIRE(one.size() == 1);
  CHECK(one[0].lane_mask == 0xffffffffu);

  std::mt19937_64 rng(4);
  for (int it = 0; it < 2000; ++it) {
    const int width = 8 << (rng() % 5);
    std::vector<LaneAddr> ls;
    std::vector<std::uint64_t> addrs;
    const std::uint64_t spread = 1 + rng() % 4096;
    for (int l = 0; l < 32; ++l) {
      if (rng() % 5 == 0) continue;
      const std::uint64_t a = (rng() % spread) / (width / 8) * (width / 8);
      ls.push_back({std::uint8_t(l), a});
      addrs.push_back(a);
    }
    const auto tx = coalesce(ls, width, 32);
    REQUIRE(tx.size() == ref::sectors_touched(addrs, width / 8, 32));
    for (std::size_t i = 1; i < tx.size(); ++i) REQUIRE(tx[i - 1].sector_addr < tx[i].sector_addr);
  }
}

TEST_CASE("mma expansion") {
  const MmaProgram mixed(MmaConfig{});
  const auto ops = expand_mma(mixed, {25, 1, 9, 17}, 0);
  REQUIRE(ops.size() == 16);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    CHECK(ops[i].mnemonic() == "HMMA");
    CHECK(ops[i].set == static_cast<int>(i / 4) + 1);
    CHECK(format_microop(ops[i]).find("STEP" + std::to_string(i % 4)) != std::string::npos);
    for (const RegisterPair& p : ops[i].operands) CHECK(p.encoded % 2 == 0);
  }
  MmaConfig t;
  t.arch = Arch::Turing;
  t.ab_type = ElemType::S8;
  t.ctype = t.dtype = ElemType::S32;
  const auto iops = expand_mma(MmaProgram(t), {25, 1, 9, 17}, 0);
  REQUIRE(iops.size() == 4);
  for (const MicroOp& op : iops) CHECK(format_microop(op).find("STEP") == std::string::npos);
}
