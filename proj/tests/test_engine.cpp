#include <random>

#include "doctest.h"
#include "tcsim/engine.hpp"
#include "tcsim/error.hpp"
#include "tcsim/harness.hpp"

using namespace tcsim;

namespace {

GenSpec spec(GenKind k, std::uint64_t seed = 0, int stream = 0) {
  GenSpec g;
  g.kind = k, g.seed = seed, g.stream = stream;
  return g;
}

struct Combo {
  Arch arch;
  TileShape shape;
  PrecisionMode mode;
  std::size_t ops;
};

const Combo kCombos[] = {
    {Arch::Volta, kM16N16K16, PrecisionMode::MixedFP32Acc, 16},
    {Arch::Volta, kM16N16K16, PrecisionMode::FP16, 8},
    {Arch::Turing, kM16N16K16, PrecisionMode::MixedFP32Acc, 4},
    {Arch::Turing, kM32N8K16, PrecisionMode::MixedFP32Acc, 4},
    {Arch::Turing, kM8N32K16, PrecisionMode::MixedFP32Acc, 4},
    {Arch::Turing, kM16N16K16, PrecisionMode::FP16, 4},
    {Arch::Turing, kM32N8K16, PrecisionMode::FP16, 4},
    {Arch::Turing, kM8N32K16, PrecisionMode::FP16, 4},
    {Arch::Turing, kM16N16K16, PrecisionMode::Int8, 4},
    {Arch::Turing, kM32N8K16, PrecisionMode::Int8, 4},
    {Arch::Turing, kM8N32K16, PrecisionMode::Int8, 4},
    {Arch::Turing, kM8N8K32, PrecisionMode::Int4, 1},
};

MmaConfig cfg_of(Arch arch, TileShape s, PrecisionMode mode) {
  MmaConfig c;
  c.arch = arch;
  c.shape = s;
  switch (mode) {
    case PrecisionMode::MixedFP32Acc: c.ab_type = ElemType::F16, c.ctype = c.dtype = ElemType::F32; break;
    case PrecisionMode::FP16: c.ab_type = c.ctype = c.dtype = ElemType::F16; break;
    case PrecisionMode::Int8: c.ab_type = ElemType::S8, c.ctype = c.dtype = ElemType::S32; break;
    case PrecisionMode::Int4: c.ab_type = ElemType::S4, c.ctype = c.dtype = ElemType::S32; break;
  }
  return c;
}

Matrix run_tile(const MmaConfig& cfg, const Matrix& a, const Matrix& b, const Matrix& c) {
  const auto& maps = MappingSet::builtin();
  const MmaProgram prog(cfg, maps);
  Memory mem(4096);
  const TileShape s = cfg.shape;
  store_matrix(mem, 0, a, cfg.a_layout, cfg.a_layout == Layout::RowMajor ? s.k : s.m);
  store_matrix(mem, 1024, b, cfg.b_layout, cfg.b_layout == Layout::RowMajor ? s.n : s.k);
  store_matrix(mem, 2048, c, Layout::RowMajor, s.n);
  WarpState st;
  const FragmentRef fa{&prog.map(Operand::A), 1};
  const FragmentRef fb{&prog.map(Operand::B), 17};
  const FragmentRef fc{&prog.map(Operand::C), 33};
  const FragmentRef fd{&prog.map(Operand::D), 49};
  execute_wmma_load(st, fa, mem, 0, cfg.a_layout == Layout::RowMajor ? s.k : s.m, cfg.a_layout);
  execute_wmma_load(st, fb, mem, 1024, cfg.b_layout == Layout::RowMajor ? s.n : s.k, cfg.b_layout);
  execute_wmma_load(st, fc, mem, 2048, s.n, Layout::RowMajor);
  CHECK(duplicates_consistent(st, fa));
  CHECK(duplicates_consistent(st, fb));
  execute_wmma_mma(st, prog, MmaOperands{fa, fb, fc, fd});
  execute_wmma_store(st, fd, mem, 3072, s.n, Layout::RowMajor);
  return load_matrix(mem, 3072, cfg.dtype, s.m, s.n, Layout::RowMajor, s.n);
}

}  // namespace

TEST_CASE("decomposition counts") {
  for (const Combo& c : kCombos) {
    CAPTURE(latency_key(c.arch, c.shape, c.mode));
    const auto ops = decompose_wmma_mma(c.arch, c.shape, c.mode);
    CHECK(ops.size() == c.ops);
  }
  CHECK_THROWS_AS(decompose_wmma_mma(Arch::Volta, kM16N16K16, PrecisionMode::Int8), UnsupportedFeature);
  CHECK_THROWS_AS(decompose_wmma_mma(Arch::Volta, kM32N8K16, PrecisionMode::FP16), UnsupportedFeature);
}

TEST_CASE("every (i, j, k) is computed exactly once") {
  for (const Combo& c : kCombos) {
    CAPTURE(latency_key(c.arch, c.shape, c.mode));
    const TileShape s = c.shape;
    std::vector<int> seen(s.m * s.n * s.k, 0);
    for (const HmmaOp& op : decompose_wmma_mma(c.arch, c.shape, c.mode))
      for (const WorkItem& w : op.work) {
        REQUIRE(w.a.col0 == w.b.row0);
        REQUIRE(w.a.col1 == w.b.row1);
        for (int i = w.a.row0; i < w.a.row1; ++i)
          for (int j = w.b.col0; j < w.b.col1; ++j)
            for (int k = w.a.col0; k < w.a.col1; ++k) ++seen[(i * s.n + j) * s.k + k];
      }
    for (int v : seen) REQUIRE(v == 1);
  }
}

TEST_CASE("Volta set/step annotations") {
  const auto mixed = decompose_wmma_mma(Arch::Volta, kM16N16K16, PrecisionMode::MixedFP32Acc);
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    CHECK(mixed[i].set == static_cast<int>(i / 4) + 1);
    CHECK(mixed[i].step == static_cast<int>(i % 4));
    CHECK(mixed[i].work.size() == 8);
    CHECK(mixed[i].fedp_count() == 64);
  }
  const auto fp16 = decompose_wmma_mma(Arch::Volta, kM16N16K16, PrecisionMode::FP16);
  CHECK(fp16[1].step == 1);
  CHECK(fp16[1].fedp_count() == 128);
  for (const HmmaOp& op : decompose_wmma_mma(Arch::Turing, kM16N16K16, PrecisionMode::Int8)) CHECK(op.step == -1);
  CHECK(volta_step_work(1, 0, 0, PrecisionMode::MixedFP32Acc).label == "a[0:1]\xC3\x97" "A");
  CHECK(volta_step_work(1, 2, 4, PrecisionMode::MixedFP32Acc).label == "e[0:1]\xC3\x97" "E");
  CHECK(volta_step_work(4, 3, 3, PrecisionMode::MixedFP32Acc).label == "d[2:3]\xC3\x97" "H");
}

TEST_CASE("Turing set examples") {
  const WorkItem w = turing_set_work(1, PrecisionMode::MixedFP32Acc, kM16N16K16);
  CHECK(w.a.inclusive() == "[0:15,0:7]");
  CHECK(w.b.inclusive() == "[0:7,0:7]");
  const WorkItem v = turing_set_work(1, PrecisionMode::MixedFP32Acc, kM8N32K16);
  CHECK(v.a.inclusive() == "[0:7,0:7]");
  CHECK(v.b.inclusive() == "[0:7,0:15]");
  const WorkItem i4 = turing_set_work(1, PrecisionMode::Int4, kM8N8K32);
  CHECK(i4.a.inclusive() == "[0:7,0:31]");
  CHECK(i4.b.inclusive() == "[0:31,0:7]");
}

TEST_CASE("mode follows the accumulator types") {
  MmaConfig c;
  c.ctype = ElemType::F16, c.dtype = ElemType::F32;
  CHECK(c.mode() == PrecisionMode::MixedFP32Acc);
  c.ctype = ElemType::F32, c.dtype = ElemType::F16;
  CHECK(c.mode() == PrecisionMode::MixedFP32Acc);
  c.ctype = c.dtype = ElemType::F16;
  CHECK(c.mode() == PrecisionMode::FP16);
  CHECK(volta_mma_configs().size() == 32);
  for (const MmaConfig& v : volta_mma_configs()) CHECK_NOTHROW(validate(v));
}

TEST_CASE("identity, zero and single-element tiles") {
  for (const MmaConfig& cfg : volta_mma_configs()) {
    CAPTURE(to_string(cfg));
    const TileShape s = cfg.shape;
    const GenSpec rnd = spec(GenKind::Random, 5, 1);
    const Matrix id = generate(cfg.ab_type, s.m, s.k, spec(GenKind::Identity));
    const Matrix b = generate(cfg.ab_type, s.k, s.n, rnd);
    const Matrix zc = generate(cfg.ctype, s.m, s.n, spec(GenKind::Zero));
    const Matrix d = run_tile(cfg, id, b, zc);
    for (int i = 0; i < s.m; ++i)
      for (int j = 0; j < s.n; ++j)
        REQUIRE(element_value(d.at(i, j), cfg.dtype) == element_value(b.at(i, j), cfg.ab_type));

    const Matrix za = generate(cfg.ab_type, s.m, s.k, spec(GenKind::Zero));
    const Matrix c = generate(cfg.ctype, s.m, s.n, spec(GenKind::Random, 9, 2));
    const Matrix d2 = run_tile(cfg, za, b, c);
    for (int i = 0; i < s.m; ++i)
      for (int j = 0; j < s.n; ++j) {
        const double want = element_value(encode_value(element_value(c.at(i, j), cfg.ctype), cfg.dtype), cfg.dtype);
        REQUIRE(element_value(d2.at(i, j), cfg.dtype) == want);
      }

    Matrix one = za;
    one.at(3, 5) = encode_value(2.0, cfg.ab_type);
    const Matrix d3 = run_tile(cfg, one, b, zc);
    for (int i = 0; i < s.m; ++i)
      for (int j = 0; j < s.n; ++j) {
        const double want = i == 3 ? 2.0 * element_value(b.at(5, j), cfg.ab_type) : 0.0;
        REQUIRE(element_value(d3.at(i, j), cfg.dtype) == want);
      }
  }
}

TEST_CASE("engine agrees with the reference on random tiles, every configuration") {
  std::vector<MmaConfig> cfgs = volta_mma_configs();
  for (const Combo& c : kCombos) {
    if (c.arch != Arch::Turing) continue;
    MmaConfig t = cfg_of(c.arch, c.shape, c.mode);
    cfgs.push_back(t);
    if (is_integer_mode(c.mode)) {
      t.ab_type = c.mode == PrecisionMode::Int8 ? ElemType::U8 : ElemType::U4;
      t.satfinite = true;
      cfgs.push_back(t);
    } else {
      t.a_layout = Layout::ColMajor, t.b_layout = Layout::RowMajor;
      cfgs.push_back(t);
    }
  }
  MmaConfig per = cfg_of(Arch::Volta, kM16N16K16, PrecisionMode::FP16);
  per.rounding = FedpRounding::PerStage;
  cfgs.push_back(per);

  for (const MmaConfig& cfg : cfgs) {
    CAPTURE(to_string(cfg));
    const TileShape s = cfg.shape;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      GenSpec ga = spec(GenKind::Random, seed, 0), gb = spec(GenKind::Random, seed, 1),
              gc = spec(GenKind::Random, seed, 2);
      if (seed % 4 == 0 && is_float(cfg.ab_type)) {
        ga.lo = gb.lo = gc.lo = -60000.0;
        ga.hi = gb.hi = gc.hi = 60000.0;
      }
      const Matrix a = generate(cfg.ab_type, s.m, s.k, ga);
      const Matrix b = generate(cfg.ab_type, s.k, s.n, gb);
      const Matrix c = generate(cfg.ctype, s.m, s.n, gc);
      REQUIRE(run_tile(cfg, a, b, c) == oracle_gemm(a, b, c, cfg));
    }
  }
}

TEST_CASE("operand contracts") {
  const MmaConfig cfg = cfg_of(Arch::Volta, kM16N16K16, PrecisionMode::MixedFP32Acc);
  const MmaProgram prog(cfg);
  WarpState st;
  const FragmentRef a{&prog.map(Operand::A), 1}, b{&prog.map(Operand::B), 9};
  const FragmentRef c{&prog.map(Operand::C), 17}, d{&prog.map(Operand::D), 25};
  CHECK_NOTHROW(execute_wmma_mma(st, prog, MmaOperands{a, b, c, d}));
  CHECK_NOTHROW(execute_wmma_mma(st, prog, MmaOperands{a, b, d, d}));  // in-place accumulate
  CHECK_THROWS_AS(execute_wmma_mma(st, prog, MmaOperands{b, a, c, d}), ContractViolation);
  CHECK_THROWS_AS(execute_wmma_mma(st, prog, MmaOperands{a, b, c, FragmentRef{&prog.map(Operand::D), 3}}),
                  ContractViolation);
  CHECK_THROWS_AS(execute_wmma_mma(st, prog, MmaOperands{a, b, c, FragmentRef{}}), ContractViolation);

  Memory mem(64);
  CHECK_THROWS_AS(execute_wmma_load(st, a, mem, 0, 16, Layout::RowMajor), OutOfBounds);
  Memory big(4096);
  CHECK_THROWS_AS(execute_wmma_load(st, a, big, 0, 16, Layout::ColMajor), ContractViolation);
  CHECK_THROWS_AS(execute_wmma_load(st, a, big, 1, 16, Layout::RowMajor), ContractViolation);
}

TEST_CASE("memory sub-byte access") {
  Memory m(4);
  m.write_bits(0, 4, 0xa);
  m.write_bits(4, 4, 0x5);
  CHECK(m.bytes()[0] == 0x5a);
  CHECK(m.read_bits(4, 4) == 0x5);
  m.write_bits(8, 16, 0xbeef);
  CHECK(m.read_bits(8, 16) == 0xbeef);
  CHECK_THROWS_AS(m.read_bits(24, 16), OutOfBounds);
}
