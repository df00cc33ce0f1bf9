#include "tcsim/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "tcsim/error.hpp"

namespace tcsim {

double element_value(std::uint32_t bits, ElemType t) {
  switch (t) {
    case ElemType::F16: return half_to_f32(Half{static_cast<std::uint16_t>(bits)});
    case ElemType::F32: return std::bit_cast<float>(bits);
    case ElemType::S32: return static_cast<std::int32_t>(bits);
    case ElemType::S8: return static_cast<std::int8_t>(bits & 0xff);
    case ElemType::U8: return bits & 0xff;
    case ElemType::S4: return (bits & 0x8) ? static_cast<int>(bits & 0xf) - 16 : static_cast<int>(bits & 0xf);
    case ElemType::U4: return bits & 0xf;
  }
  return 0;
}

std::uint32_t encode_value(double v, ElemType t) {
  if (t == ElemType::F16) return half_from_f32(static_cast<float>(v)).bits;
  if (t == ElemType::F32) return std::bit_cast<std::uint32_t>(static_cast<float>(v));
  double lo = 0, hi = 0;
  switch (t) {
    case ElemType::S8: lo = -128; hi = 127; break;
    case ElemType::U8: lo = 0; hi = 255; break;
    case ElemType::S4: lo = -8; hi = 7; break;
    case ElemType::U4: lo = 0; hi = 15; break;
    default:
      lo = std::numeric_limits<std::int32_t>::min();
      hi = std::numeric_limits<std::int32_t>::max();
  }
  const auto x = static_cast<std::int64_t>(std::clamp(std::nearbyint(v), lo, hi));
  const int bits = elem_bits(t);
  return static_cast<std::uint32_t>(x) & (bits == 32 ? 0xffffffffu : (1u << bits) - 1u);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double positional_uniform(std::uint64_t seed, int stream, int row, int col) {
  std::uint64_t x = splitmix64(seed);
  x = splitmix64(x ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(stream)));
  x = splitmix64(x ^ ((static_cast<std::uint64_t>(static_cast<std::uint32_t>(row)) << 32) |
                      static_cast<std::uint32_t>(col)));
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

void default_range(ElemType t, double& lo, double& hi) {
  switch (t) {
    case ElemType::F16:
    case ElemType::F32: lo = -2; hi = 2; break;
    case ElemType::S8: lo = -128; hi = 127; break;
    case ElemType::U8: lo = 0; hi = 255; break;
    case ElemType::S4: lo = -8; hi = 7; break;
    case ElemType::U4: lo = 0; hi = 15; break;
    case ElemType::S32: lo = -1024; hi = 1024; break;
  }
}

Matrix generate(ElemType t, int rows, int cols, const GenSpec& gen) {
  Matrix m(t, rows, cols);
  double lo = 0, hi = 0;
  default_range(t, lo, hi);
  if (gen.lo) lo = *gen.lo;
  if (gen.hi) hi = *gen.hi;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double v = 0;
      switch (gen.kind) {
        case GenKind::Zero: break;
        case GenKind::Identity: v = r == c ? 1 : 0; break;
        case GenKind::Iota: v = static_cast<double>(r) * cols + c; break;
        case GenKind::Random: {
          const double u = positional_uniform(gen.seed, gen.stream, r, c);
          if (is_float(t)) v = lo + u * (hi - lo);
          else v = std::min(std::floor(lo + u * (hi - lo + 1)), hi);
          break;
        }
      }
      m.at(r, c) = encode_value(v, t);
    }
  return m;
}

void store_matrix(Memory& mem, std::uint64_t base, const Matrix& m, Layout layout, int ld) {
  const int bits = elem_bits(m.type);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      mem.write_bits(element_bit_address(base, r, c, layout, ld, bits), bits, m.at(r, c));
}

Matrix load_matrix(const Memory& mem, std::uint64_t base, ElemType t, int rows, int cols,
                   Layout layout, int ld) {
  Matrix m(t, rows, cols);
  const int bits = elem_bits(t);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m.at(r, c) = mem.read_bits(element_bit_address(base, r, c, layout, ld, bits), bits);
  return m;
}

// ---- executor ----

WarpExecutor::WarpExecutor(Arch arch, const TimingConfig& cfg, const MappingSet& maps,
                           bool timing, bool record)
    : arch_(arch), cfg_(cfg), maps_(maps), timing_(timing || record), record_(record),
      alloc_(cfg.register_base) {
  cfg_.validate();
  if (timing_) sched_ = std::make_unique<Scheduler>(cfg_, 1, record_);
}

WarpExecutor::~WarpExecutor() = default;

namespace {

std::string frag_name(const FragOperand& f) {
  if (!f.name.empty()) return f.name;
  FragOperand plain = f;
  plain.reuse = false;
  return plain.text();
}

}  // namespace

const FragmentRef& WarpExecutor::fragment(const FragOperand& f) const {
  auto it = frags_.find(frag_name(f));
  if (it == frags_.end()) throw ContractViolation("unbound fragment '" + frag_name(f) + "'");
  return it->second;
}

const MmaProgram& WarpExecutor::program(const MmaConfig& cfg) {
  auto& slot = programs_[cfg];
  if (!slot) slot = std::make_unique<MmaProgram>(cfg, maps_);
  return *slot;
}

void WarpExecutor::account(const PtxWmmaInstr& instr, std::vector<MicroOp>& ops) {
  const std::string cls(to_string(instr.kind));
  for (MicroOp& op : ops) {
    op.instr = instr_;
    ++report_.counts[op.mnemonic()];
    if (op.kind != MicroOpKind::Hmma) {
      TransactionStats& s = report_.transactions[cls];
      ++s.micro_ops;
      s.transactions += op.transactions;
      s.bytes += static_cast<std::int64_t>(op.lanes.size()) * op.width_bits / 8;
    }
    TimedInstr t = lower(op, cfg_);
    if (record_) {
      t.tag = static_cast<std::int64_t>(report_.microops.size());
      report_.microops.push_back(format_microop(op));
    }
    sched_->push(0, std::move(t));
  }
  if (instr.kind != WmmaKind::Mma) ++report_.transactions[cls].instructions;
}

void WarpExecutor::execute(const PtxWmmaInstr& instr, std::uint64_t addr) {
  switch (instr.kind) {
    case WmmaKind::LoadA:
    case WmmaKind::LoadB:
    case WmmaKind::LoadC: {
      const FragmentKey key = instr.fragment_key(arch_);
      validate_fragment_key(key);
      const FragmentMap& map = maps_.at(key);
      const std::string name = frag_name(instr.frags.at(0));
      const FragmentRef ref{&map, alloc_.allocate(name, map.regs_per_lane())};
      execute_wmma_load(state_, ref, mem_, addr, instr.effective_stride(), instr.layout);
      frags_[name] = ref;
      if (timing_) {
        auto ops = expand_load(instr, arch_, addr, ref.base_reg, maps_, cfg_.sector_bytes);
        account(instr, ops);
      }
      break;
    }
    case WmmaKind::Mma: {
      const MmaConfig cfg = instr.mma_config(arch_);
      const MmaProgram& prog = program(cfg);
      const FragmentRef a = fragment(instr.frags.at(1));
      const FragmentRef b = fragment(instr.frags.at(2));
      const FragmentRef c = fragment(instr.frags.at(3));
      const std::string dname = frag_name(instr.frags.at(0));
      const FragmentMap& dmap = prog.map(Operand::D);
      const FragmentRef d{&dmap, alloc_.allocate(dname, dmap.regs_per_lane())};
      execute_wmma_mma(state_, prog, MmaOperands{a, b, c, d});
      frags_[dname] = d;
      if (timing_) {
        auto ops = expand_mma(prog, {d.base_reg, a.base_reg, b.base_reg, c.base_reg}, chain_++,
                              instr_,
                              {false, instr.frags[1].reuse, instr.frags[2].reuse, instr.frags[3].reuse});
        account(instr, ops);
      }
      break;
    }
    case WmmaKind::StoreD: {
      const FragmentRef src = fragment(instr.frags.at(0));
      const FragmentKey& k = src.map->key();
      if (k.type != instr.type || k.shape != instr.shape ||
          (k.operand != Operand::C && k.operand != Operand::D))
        throw ContractViolation("store.d type or shape does not match fragment " + to_string(k));
      execute_wmma_store(state_, src, mem_, addr, instr.effective_stride(), instr.layout);
      if (timing_) {
        auto ops = expand_store(instr, arch_, addr, src.base_reg, maps_, cfg_.sector_bytes);
        if (cfg_.store_drains && !ops.empty()) ops.back().fence_after = true;
        account(instr, ops);
      }
      break;
    }
  }
  ++report_.counts["wmma." + std::string(to_string(instr.kind))];
  ++instr_;
}

RunReport WarpExecutor::finish() {
  if (sched_) report_.cycles = sched_->finish();
  return std::move(report_);
}

// ---- gemm ----

namespace {

int round_up(int x, int m) { return (x + m - 1) / m * m; }
std::uint64_t align256(std::uint64_t x) { return (x + 255) / 256 * 256; }

std::uint64_t byte_offset(int r, int c, Layout layout, int ld, ElemType t) {
  return element_bit_address(0, r, c, layout, ld, elem_bits(t)) / 8;
}

}  // namespace

GemmLayout gemm_layout(const GemmJob& job) {
  const MmaConfig& cfg = job.mma;
  if (job.m <= 0 || job.n <= 0 || job.k <= 0) throw ContractViolation("GEMM dimensions must be positive");
  GemmLayout L;
  L.mp = round_up(job.m, cfg.shape.m);
  L.np = round_up(job.n, cfg.shape.n);
  L.kp = round_up(job.k, cfg.shape.k);
  L.lda = cfg.a_layout == Layout::RowMajor ? L.kp : L.mp;
  L.ldb = cfg.b_layout == Layout::RowMajor ? L.np : L.kp;
  L.ldc = job.c_layout == Layout::RowMajor ? L.np : L.mp;
  auto bytes = [](std::uint64_t elems, ElemType t) { return (elems * elem_bits(t) + 7) / 8; };
  L.a_bytes = bytes(std::uint64_t(L.mp) * L.kp, cfg.ab_type);
  L.b_bytes = bytes(std::uint64_t(L.kp) * L.np, cfg.ab_type);
  L.c_bytes = bytes(std::uint64_t(L.mp) * L.np, cfg.ctype);
  L.d_bytes = bytes(std::uint64_t(L.mp) * L.np, cfg.dtype);
  L.a = 0;
  L.b = align256(L.a + L.a_bytes);
  L.c = align256(L.b + L.b_bytes);
  L.d = align256(L.c + L.c_bytes);
  L.total = align256(L.d + L.d_bytes);
  if (L.total > (std::uint64_t(1) << 34)) throw ContractViolation("GEMM exceeds the modeled memory");
  return L;
}

void for_each_gemm_instr(const GemmJob& job,
                         const std::function<void(const PtxWmmaInstr&, char, std::uint64_t)>& fn) {
  const MmaConfig& cfg = job.mma;
  validate(cfg);
  const GemmLayout L = gemm_layout(job);
  const TileShape s = cfg.shape;
  const int tiles_k = L.kp / s.k;
  const std::string acc[2] = {"acc0", "acc1"};

  auto mem_instr = [&](WmmaKind kind, Layout layout, ElemType type, const std::string& frag,
                       char region, std::uint64_t off, int ld) {
    PtxWmmaInstr in;
    in.kind = kind;
    in.aligned = true;
    in.shape = s;
    in.layout = layout;
    in.type = type;
    in.frags = {FragOperand{frag, {}, false}};
    in.addr = AddrOperand{std::string(1, region), static_cast<std::int64_t>(off)};
    in.stride = ld;
    fn(in, region, off);
  };

  for (int i = 0; i < L.mp / s.m; ++i)
    for (int j = 0; j < L.np / s.n; ++j) {
      const std::uint64_t c_off = byte_offset(i * s.m, j * s.n, job.c_layout, L.ldc, cfg.ctype);
      mem_instr(WmmaKind::LoadC, job.c_layout, cfg.ctype, "c", 'C', c_off, L.ldc);
      for (int kk = 0; kk < tiles_k; ++kk) {
        mem_instr(WmmaKind::LoadA, cfg.a_layout, cfg.ab_type, "a", 'A',
                  byte_offset(i * s.m, kk * s.k, cfg.a_layout, L.lda, cfg.ab_type), L.lda);
        mem_instr(WmmaKind::LoadB, cfg.b_layout, cfg.ab_type, "b", 'B',
                  byte_offset(kk * s.k, j * s.n, cfg.b_layout, L.ldb, cfg.ab_type), L.ldb);
        PtxWmmaInstr mma;
        mma.kind = WmmaKind::Mma;
        mma.aligned = true;
        mma.shape = s;
        mma.a_layout = cfg.a_layout;
        mma.b_layout = cfg.b_layout;
        mma.ab_type = cfg.ab_type;
        mma.dtype = cfg.dtype;
        mma.ctype = kk == 0 ? cfg.ctype : cfg.dtype;
        mma.satfinite = cfg.satfinite;
        mma.frags = {FragOperand{acc[kk % 2], {}, false}, FragOperand{"a", {}, false},
                     FragOperand{"b", {}, false},
                     FragOperand{kk == 0 ? "c" : acc[(kk - 1) % 2], {}, false}};
        fn(mma, 0, 0);
      }
      const std::uint64_t d_off = byte_offset(i * s.m, j * s.n, job.c_layout, L.ldc, cfg.dtype);
      mem_instr(WmmaKind::StoreD, job.c_layout, cfg.dtype, acc[(tiles_k - 1) % 2], 'D', d_off, L.ldc);
    }
}

namespace {

GenSpec random_spec(const GemmJob& job, int stream, ElemType t) {
  GenSpec g;
  g.kind = GenKind::Random;
  g.seed = job.seed;
  g.stream = stream;
  if (is_float(t)) {
    g.lo = job.lo;
    g.hi = job.hi;
  }
  return g;
}

Matrix pad(const Matrix& m, int rows, int cols) {
  Matrix p(m.type, rows, cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) p.at(r, c) = m.at(r, c);
  return p;
}

}  // namespace

RunReport run_gemm(const GemmJob& job, const TimingConfig& cfg, const MappingSet& maps) {
  const MmaConfig mc = [&] {
    MmaConfig c = job.mma;
    validate(c);
    return c;
  }();
  const GemmLayout L = gemm_layout(job);
  WarpExecutor ex(mc.arch, cfg, maps, job.timing, job.record);
  Memory& mem = ex.memory();
  mem.resize(L.total);

  const Matrix a = generate(mc.ab_type, job.m, job.k, random_spec(job, 0, mc.ab_type));
  const Matrix b = generate(mc.ab_type, job.k, job.n, random_spec(job, 1, mc.ab_type));
  const Matrix c = generate(mc.ctype, job.m, job.n, random_spec(job, 2, mc.ctype));
  store_matrix(mem, L.a, a, mc.a_layout, L.lda);
  store_matrix(mem, L.b, b, mc.b_layout, L.ldb);
  store_matrix(mem, L.c, c, job.c_layout, L.ldc);

  const std::uint64_t region[4] = {L.a, L.b, L.c, L.d};
  for_each_gemm_instr(job, [&](const PtxWmmaInstr& in, char r, std::uint64_t off) {
    ex.execute(in, r ? region[r - 'A'] + off : 0);
  });

  RunReport rep = ex.finish();
  rep.d = load_matrix(mem, L.d, mc.dtype, job.m, job.n, job.c_layout, L.ldc);
  rep.dumps["D"].assign(mem.bytes().begin() + L.d, mem.bytes().begin() + L.d + L.d_bytes);

  if (job.verify) {
    const Matrix ref = oracle_gemm(pad(a, L.mp, L.kp), pad(b, L.kp, L.np), pad(c, L.mp, L.np), mc);
    rep.verified = true;
    for (int i = 0; i < job.m; ++i)
      for (int j = 0; j < job.n; ++j) {
        const std::uint32_t got = rep.d.at(i, j), want = ref.at(i, j);
        if (got == want) continue;
        ++rep.mismatches;
        const double x = element_value(got, mc.dtype), y = element_value(want, mc.dtype);
        if (std::isfinite(x) && std::isfinite(y))
          rep.max_abs_diff = std::max(rep.max_abs_diff, std::fabs(x - y));
        else
          rep.max_abs_diff = std::numeric_limits<double>::infinity();
      }
    rep.pass = rep.mismatches == 0;
  }
  return rep;
}

}  // namespace tcsim
