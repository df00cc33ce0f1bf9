#include "tcsim/engine.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <set>

#include "tcsim/error.hpp"

namespace tcsim {

PrecisionMode MmaConfig::mode() const {
  switch (ab_type) {
    case ElemType::S8:
    case ElemType::U8: return PrecisionMode::Int8;
    case ElemType::S4:
    case ElemType::U4: return PrecisionMode::Int4;
    default: break;
  }
  if (ctype == ElemType::F16 && dtype == ElemType::F16) return PrecisionMode::FP16;
  return PrecisionMode::MixedFP32Acc;
}

FragmentKey MmaConfig::key(Operand op, Layout cd_layout) const {
  switch (op) {
    case Operand::A: return FragmentKey{arch, op, shape, a_layout, ab_type};
    case Operand::B: return FragmentKey{arch, op, shape, b_layout, ab_type};
    case Operand::C: return FragmentKey{arch, op, shape, cd_layout, ctype};
    case Operand::D: return FragmentKey{arch, op, shape, cd_layout, dtype};
  }
  return {};
}

std::string to_string(const MmaConfig& c) {
  std::string s = std::string(to_string(c.arch)) + " " + to_string(c.shape) + " " +
                  std::string(to_string(c.a_layout)) + "." +
                  std::string(to_string(c.b_layout)) + " " +
                  std::string(to_string(c.ab_type)) + " d=" +
                  std::string(to_string(c.dtype)) + " c=" + std::string(to_string(c.ctype));
  if (c.satfinite) s += " satfinite";
  return s;
}

void validate(const MmaConfig& c) {
  auto fail = [&](const std::string& why) {
    throw UnsupportedFeature("unsupported mma configuration (" + to_string(c) + "): " + why);
  };
  const bool fp_cd = (c.ctype == ElemType::F16 || c.ctype == ElemType::F32) &&
                     (c.dtype == ElemType::F16 || c.dtype == ElemType::F32);
  const bool fp_shape =
      c.shape == kM16N16K16 || c.shape == kM32N8K16 || c.shape == kM8N32K16;
  if (c.arch == Arch::Volta) {
    if (c.shape != kM16N16K16) fail("Volta supports m16n16k16 only");
    if (c.ab_type != ElemType::F16) fail("Volta multiplicands are f16");
    if (!fp_cd) fail("Volta accumulators are f16 or f32");
    return;
  }
  switch (c.mode()) {
    case PrecisionMode::MixedFP32Acc:
    case PrecisionMode::FP16:
      if (c.ab_type != ElemType::F16) fail("floating multiplicands must be f16");
      if (!fp_shape) fail("shape not available for f16");
      if (!fp_cd) fail("accumulators must be f16 or f32");
      break;
    case PrecisionMode::Int8:
      if (!fp_shape) fail("shape not available for 8-bit integers");
      if (c.ctype != ElemType::S32 || c.dtype != ElemType::S32) fail("integer accumulators are s32");
      break;
    case PrecisionMode::Int4:
      if (c.shape != kM8N8K32) fail("4-bit integers use m8n8k32");
      if (c.ctype != ElemType::S32 || c.dtype != ElemType::S32) fail("integer accumulators are s32");
      if (c.a_layout != Layout::RowMajor || c.b_layout != Layout::ColMajor)
        fail("4-bit integers require row.col layouts");
      break;
  }
}

std::vector<MmaConfig> volta_mma_configs() {
  std::vector<MmaConfig> out;
  for (Layout a : {Layout::RowMajor, Layout::ColMajor})
    for (Layout b : {Layout::RowMajor, Layout::ColMajor})
      for (ElemType d : {ElemType::F16, ElemType::F32})
        for (ElemType c : {ElemType::F16, ElemType::F32})
          for (bool sat : {false, true}) {
            MmaConfig cfg;
            cfg.a_layout = a;
            cfg.b_layout = b;
            cfg.dtype = d;
            cfg.ctype = c;
            cfg.satfinite = sat;
            out.push_back(cfg);
          }
  return out;
}

int HmmaOp::fedp_count() const {
  int n = 0;
  for (const WorkItem& w : work) n += w.out().rows() * w.out().cols() * (w.a.cols() / 4);
  return n;
}

int volta_steps_per_set(PrecisionMode mode) {
  if (mode == PrecisionMode::MixedFP32Acc) return 4;
  if (mode == PrecisionMode::FP16) return 2;
  throw UnsupportedFeature("Volta has no " + std::string(to_string(mode)) + " mode");
}

namespace {

constexpr const char* kTimes = "\xC3\x97";  // U+00D7

std::string letter_label(char a, const char* slice, char b) {
  return std::string(1, a) + slice + kTimes + std::string(1, b);
}

}  // namespace

WorkItem volta_step_work(int set, int step, int tg, PrecisionMode mode) {
  const int steps = volta_steps_per_set(mode);
  if (set < 1 || set > 4) throw ContractViolation("set outside 1..4");
  if (step < 0 || step >= steps) throw ContractViolation("step outside 0.." + std::to_string(steps - 1));
  if (tg < 0 || tg >= kThreadGroups) throw ContractViolation("threadgroup outside 0..7");

  const int octet = tg % kOctets;
  const int k0 = 4 * (set - 1);
  const char a_letter = static_cast<char>((tg < 4 ? 'a' : 'e') + set - 1);
  WorkItem w;
  w.threadgroup = tg;
  if (mode == PrecisionMode::MixedFP32Acc) {
    // 2x4 of A times 4x4 of B; odd steps take the lower half of the A rows,
    // steps 2 and 3 move to the upper threadgroup's B columns.
    const int r0 = volta_a_segment_row(tg) + 2 * (step & 1);
    const int c0 = volta_b_segment_col(step < 2 ? octet : octet + 4);
    w.a = Rect{r0, r0 + 2, k0, k0 + 4};
    w.b = Rect{k0, k0 + 4, c0, c0 + 4};
    w.label = letter_label(a_letter, (step & 1) ? "[2:3]" : "[0:1]",
                           static_cast<char>((step < 2 ? 'A' : 'E') + set - 1));
  } else {
    const int r0 = volta_a_segment_row(tg);
    const int c0 = volta_b_segment_col(step == 0 ? octet : octet + 4);
    w.a = Rect{r0, r0 + 4, k0, k0 + 4};
    w.b = Rect{k0, k0 + 4, c0, c0 + 4};
    w.label = letter_label(a_letter, "[0:3]",
                           static_cast<char>((step == 0 ? 'A' : 'E') + set - 1));
  }
  return w;
}

namespace {

WorkItem turing_item(Rect a, Rect b) {
  WorkItem w;
  w.a = a;
  w.b = b;
  w.label = "A" + a.inclusive() + kTimes + "B" + b.inclusive();
  return w;
}

void check_turing(TileShape shape, PrecisionMode mode) {
  const bool fp_shape = shape == kM16N16K16 || shape == kM32N8K16 || shape == kM8N32K16;
  if (mode == PrecisionMode::Int4 ? shape != kM8N8K32 : !fp_shape)
    throw UnsupportedFeature("Turing has no " + to_string(shape) + " shape in " +
                             std::string(to_string(mode)) + " mode");
}

}  // namespace

WorkItem turing_set_work(int set, PrecisionMode mode, TileShape shape) {
  check_turing(shape, mode);
  if (mode == PrecisionMode::Int4) {
    // a single op covering the whole tile
    if (set != 1) throw ContractViolation("4-bit mma is a single op (set 1)");
    return turing_item({0, 8, 0, 32}, {0, 32, 0, 8});
  }
  if (set < 1 || set > 4) throw ContractViolation("set outside 1..4");
  const int s = set - 1;
  if (mode == PrecisionMode::Int8) {
    // full K per set, output split in quarters
    if (shape == kM16N16K16) {
      const int m0 = 8 * (s >> 1), n0 = 8 * (s & 1);
      return turing_item({m0, m0 + 8, 0, 16}, {0, 16, n0, n0 + 8});
    }
    if (shape == kM32N8K16) return turing_item({8 * s, 8 * s + 8, 0, 16}, {0, 16, 0, 8});
    return turing_item({0, 8, 0, 16}, {0, 16, 8 * s, 8 * s + 8});
  }
  // floating modes: K split in halves, the other half of the set index
  // walks the longer output dimension
  const int half = s >> 1;
  const int k0 = 8 * (s & 1);
  if (shape == kM16N16K16)
    return turing_item({0, 16, k0, k0 + 8}, {k0, k0 + 8, 8 * half, 8 * half + 8});
  if (shape == kM32N8K16)
    return turing_item({16 * half, 16 * half + 16, k0, k0 + 8}, {k0, k0 + 8, 0, 8});
  return turing_item({0, 8, k0, k0 + 8}, {k0, k0 + 8, 16 * half, 16 * half + 16});
}

std::vector<HmmaOp> decompose_wmma_mma(Arch arch, TileShape shape, PrecisionMode mode) {
  std::vector<HmmaOp> ops;
  if (arch == Arch::Volta) {
    if (shape != kM16N16K16) throw UnsupportedFeature("Volta supports m16n16k16 only");
    const int steps = volta_steps_per_set(mode);
    for (int set = 1; set <= 4; ++set)
      for (int step = 0; step < steps; ++step) {
        HmmaOp op{arch, mode, shape, set, step, {}};
        for (int tg = 0; tg < kThreadGroups; ++tg)
          op.work.push_back(volta_step_work(set, step, tg, mode));
        ops.push_back(std::move(op));
      }
    return ops;
  }
  check_turing(shape, mode);
  if (mode == PrecisionMode::Int4) {
    ops.push_back(HmmaOp{arch, mode, shape, 1, -1, {turing_set_work(1, mode, shape)}});
    return ops;
  }
  for (int set = 1; set <= 4; ++set)
    ops.push_back(HmmaOp{arch, mode, shape, set, -1, {turing_set_work(set, mode, shape)}});
  return ops;
}

// ---- memory ----

void Memory::check(std::uint64_t bit_addr, int bits) const {
  const std::uint64_t end = (bit_addr + bits + 7) / 8;
  if (end > bytes_.size())
    throw OutOfBounds("memory access at byte " + std::to_string(bit_addr / 8) +
                      " beyond modeled size " + std::to_string(bytes_.size()));
}

std::uint32_t Memory::read_bits(std::uint64_t bit_addr, int bits) const {
  check(bit_addr, bits);
  const std::uint64_t byte = bit_addr / 8;
  if (bits == 4) return (bytes_[byte] >> (bit_addr % 8)) & 0xfu;
  std::uint32_t v = 0;
  for (int i = 0; i < bits / 8; ++i) v |= static_cast<std::uint32_t>(bytes_[byte + i]) << (8 * i);
  return v;
}

void Memory::write_bits(std::uint64_t bit_addr, int bits, std::uint32_t value) {
  check(bit_addr, bits);
  const std::uint64_t byte = bit_addr / 8;
  if (bits == 4) {
    const int sh = static_cast<int>(bit_addr % 8);
    bytes_[byte] = static_cast<std::uint8_t>((bytes_[byte] & ~(0xfu << sh)) | ((value & 0xfu) << sh));
    return;
  }
  for (int i = 0; i < bits / 8; ++i) bytes_[byte + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

// ---- warp state ----

WarpState::WarpState() : regs_(kWarpSize) {
  for (auto& r : regs_) r.fill(0);
}

namespace {

std::uint32_t elem_mask(int bits) { return bits == 32 ? 0xffffffffu : (1u << bits) - 1u; }

void check_ref(const FragmentRef& f, const char* what) {
  if (!f.bound()) throw ContractViolation(std::string("unbound fragment: ") + what);
  if (f.base_reg < 0 || f.base_reg + f.map->regs_per_lane() > WarpState::kRegs)
    throw ContractViolation(std::string("fragment registers out of range: ") + what);
}

}  // namespace

std::uint32_t WarpState::elem(const FragmentRef& f, int lane, int e) const {
  const int per = f.map->elems_per_slot();
  const int bits = f.map->elem_bits();
  return (regs_[lane][f.base_reg + e / per] >> ((e % per) * bits)) & elem_mask(bits);
}

void WarpState::set_elem(const FragmentRef& f, int lane, int e, std::uint32_t v) {
  const int per = f.map->elems_per_slot();
  const int bits = f.map->elem_bits();
  const int sh = (e % per) * bits;
  const std::uint32_t m = elem_mask(bits) << sh;
  std::uint32_t& r = regs_[lane][f.base_reg + e / per];
  r = (r & ~m) | ((v << sh) & m);
}

// ---- compiled mma ----

MmaProgram::MmaProgram(const MmaConfig& cfg, const MappingSet& maps)
    : cfg_(cfg), mode_(cfg.mode()) {
  validate(cfg);
  ops_ = decompose_wmma_mma(cfg.arch, cfg.shape, mode_);
  for (Operand op : {Operand::A, Operand::B, Operand::C, Operand::D})
    maps_[static_cast<int>(op)] = &maps.at(cfg.key(op));

  const FragmentMap& A = map(Operand::A);
  const FragmentMap& B = map(Operand::B);
  const FragmentMap& C = map(Operand::C);
  const FragmentMap& D = map(Operand::D);
  auto source = [](const FragmentMap& m, FragmentMap::Owner o) {
    const int per = m.elems_per_slot();
    return Source{o.lane, static_cast<std::uint8_t>(o.elem / per),
                  static_cast<std::uint8_t>((o.elem % per) * m.elem_bits())};
  };
  auto owner = [](const FragmentMap& m, int r, int c, std::uint32_t mask) {
    auto o = m.owner_in(r, c, mask);
    if (!o)
      throw ContractViolation("element (" + std::to_string(r) + "," + std::to_string(c) +
                              ") of " + to_string(m.key()) + " not held inside the octet");
    return *o;
  };

  std::set<std::pair<int, int>> touched;  // (lane, D elem) seen in earlier ops
  for (const HmmaOp& op : ops_) {
    OpPlan plan;
    std::set<int> a_regs, b_regs, c_regs, acc_regs, d_regs;
    for (const WorkItem& w : op.work) {
      const std::uint32_t mask =
          w.threadgroup >= 0 ? octet_of(w.threadgroup).lane_mask() : 0xffffffffu;
      const Rect out = w.out();
      for (int r = out.row0; r < out.row1; ++r)
        for (int c = out.col0; c < out.col1; ++c) {
          const auto d_own = owner(D, r, c, mask);
          if (d_own.elem >= WarpState::kMaxAccElems)
            throw ContractViolation("D fragment larger than the accumulator buffer");
          Item it{};
          it.d = source(D, d_own);
          it.c = source(C, owner(C, r, c, mask));
          it.d_lane = d_own.lane;
          it.d_elem = d_own.elem;
          it.chunks = static_cast<std::uint8_t>(w.a.cols() / 4);
          it.first = static_cast<std::uint32_t>(plan.a_src.size());
          for (int k = w.a.col0; k < w.a.col1; ++k) {
            plan.a_src.push_back(source(A, owner(A, r, k, mask)));
            plan.b_src.push_back(source(B, owner(B, k, c, mask)));
            a_regs.insert(plan.a_src.back().reg);
            b_regs.insert(plan.b_src.back().reg);
          }
          if (touched.insert({d_own.lane, d_own.elem}).second)
            c_regs.insert(it.c.reg);
          else
            acc_regs.insert(it.d.reg);
          d_regs.insert(it.d.reg);
          plan.items.push_back(it);
        }
    }
    plan.a_regs.assign(a_regs.begin(), a_regs.end());
    plan.b_regs.assign(b_regs.begin(), b_regs.end());
    plan.c_regs.assign(c_regs.begin(), c_regs.end());
    plan.acc_regs.assign(acc_regs.begin(), acc_regs.end());
    plan.d_regs.assign(d_regs.begin(), d_regs.end());
    plans_.push_back(std::move(plan));
  }
}

void begin_mma(WarpState& state) { state.acc_live.fill(0); }

namespace {

bool same_layout(const FragmentMap& x, const FragmentMap& y) {
  if (&x == &y) return true;
  // an accumulator fragment may be fed back as C, so C and D are interchangeable
  auto cls = [](Operand op) { return op == Operand::D ? Operand::C : op; };
  if (cls(x.key().operand) != cls(y.key().operand) || x.key().type != y.key().type ||
      x.key().shape != y.key().shape || x.key().arch != y.key().arch)
    return false;
  for (int l = 0; l < kWarpSize; ++l) {
    auto a = x.lane(l), b = y.lane(l);
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) return false;
  }
  return true;
}

bool overlaps(const FragmentRef& x, const FragmentRef& y) {
  return x.base_reg < y.base_reg + y.map->regs_per_lane() &&
         y.base_reg < x.base_reg + x.map->regs_per_lane();
}

void check_operands(const MmaProgram& prog, const MmaOperands& o) {
  check_ref(o.a, "A");
  check_ref(o.b, "B");
  check_ref(o.c, "C");
  check_ref(o.d, "D");
  const struct { const FragmentRef& ref; Operand op; } all[] = {
      {o.a, Operand::A}, {o.b, Operand::B}, {o.c, Operand::C}, {o.d, Operand::D}};
  for (const auto& [ref, op] : all)
    if (!same_layout(*ref.map, prog.map(op)))
      throw ContractViolation("fragment " + to_string(ref.map->key()) +
                              " does not match the mma configuration");
  if (overlaps(o.a, o.b) || overlaps(o.a, o.c) || overlaps(o.a, o.d) ||
      overlaps(o.b, o.c) || overlaps(o.b, o.d))
    throw ContractViolation("A/B fragment registers overlap another operand");
  const bool c_is_d = o.c.base_reg == o.d.base_reg && o.c.map->key().type == o.d.map->key().type;
  if (!c_is_d && overlaps(o.c, o.d))
    throw ContractViolation("C and D fragments partially overlap");
}

std::int32_t int_elem(std::uint32_t raw, ElemType t) {
  switch (t) {
    case ElemType::S8: return static_cast<std::int8_t>(raw & 0xffu);
    case ElemType::U8: return static_cast<std::int32_t>(raw & 0xffu);
    case ElemType::S4: return static_cast<std::int32_t>((raw & 0xfu) ^ 0x8u) - 8;
    case ElemType::U4: return static_cast<std::int32_t>(raw & 0xfu);
    default: return static_cast<std::int32_t>(raw);
  }
}

}  // namespace

void execute_hmma(WarpState& state, const MmaProgram& prog, int op_index,
                  const MmaOperands& o) {
  check_operands(prog, o);
  const MmaProgram::OpPlan& plan = prog.plan(op_index);
  const MmaConfig& cfg = prog.config();
  const int ab_bits = elem_bits(cfg.ab_type);
  const std::uint32_t ab_mask = elem_mask(ab_bits);
  auto rd = [&](const FragmentRef& f, MmaProgram::Source s) {
    return state.reg(s.lane, f.base_reg + s.reg) >> s.shift;
  };
  auto wr = [&](const FragmentRef& f, MmaProgram::Source s, std::uint32_t v, int bits) {
    const std::uint32_t m = elem_mask(bits) << s.shift;
    const std::uint32_t old = state.reg(s.lane, f.base_reg + s.reg);
    state.set_reg(s.lane, f.base_reg + s.reg, (old & ~m) | ((v << s.shift) & m));
  };

  const PrecisionMode mode = prog.mode();
  for (const MmaProgram::Item& it : plan.items) {
    const std::uint8_t bit = static_cast<std::uint8_t>(1u << it.d_elem);
    std::uint8_t& live = state.acc_live[it.d_lane];
    std::int64_t& slot = state.acc[it.d_lane][it.d_elem];
    const bool seed = !(live & bit);
    live |= bit;
    const MmaProgram::Source* as = plan.a_src.data() + it.first;
    const MmaProgram::Source* bs = plan.b_src.data() + it.first;

    if (mode == PrecisionMode::MixedFP32Acc || mode == PrecisionMode::FP16) {
      float fa[4], fb[4];
      if (mode == PrecisionMode::MixedFP32Acc) {
        float acc;
        if (seed) {
          const std::uint32_t c = rd(o.c, it.c);
          acc = cfg.ctype == ElemType::F16 ? half_to_f32_fast(Half{static_cast<std::uint16_t>(c)})
                                           : std::bit_cast<float>(c);
        } else {
          acc = std::bit_cast<float>(static_cast<std::uint32_t>(slot));
        }
        for (int ch = 0; ch < it.chunks; ++ch) {
          for (int i = 0; i < 4; ++i) {
            fa[i] = half_to_f32_fast(Half{static_cast<std::uint16_t>(rd(o.a, as[4 * ch + i]))});
            fb[i] = half_to_f32_fast(Half{static_cast<std::uint16_t>(rd(o.b, bs[4 * ch + i]))});
          }
          acc = fedp4_f32(fa, fb, acc);
        }
        slot = std::bit_cast<std::uint32_t>(acc);
        if (cfg.dtype == ElemType::F32) {
          wr(o.d, it.d, std::bit_cast<std::uint32_t>(cfg.satfinite ? saturate_finite(acc) : acc), 32);
        } else {
          Half h = half_from_f32(acc);
          if (cfg.satfinite) h = saturate_finite(h);
          wr(o.d, it.d, h.bits, 16);
        }
      } else {
        Half acc = seed ? Half{static_cast<std::uint16_t>(rd(o.c, it.c))}
                        : Half{static_cast<std::uint16_t>(slot)};
        for (int ch = 0; ch < it.chunks; ++ch) {
          for (int i = 0; i < 4; ++i) {
            fa[i] = half_to_f32_fast(Half{static_cast<std::uint16_t>(rd(o.a, as[4 * ch + i]))});
            fb[i] = half_to_f32_fast(Half{static_cast<std::uint16_t>(rd(o.b, bs[4 * ch + i]))});
          }
          acc = fedp4_f16(fa, fb, acc, cfg.rounding);
        }
        slot = acc.bits;
        wr(o.d, it.d, (cfg.satfinite ? saturate_finite(acc) : acc).bits, 16);
      }
      continue;
    }

    // integer modes: exact sum, wrapped or clamped when written to D
    std::int64_t acc = seed ? static_cast<std::int32_t>(rd(o.c, it.c)) : slot;
    for (int i = 0; i < 4 * it.chunks; ++i)
      acc += static_cast<std::int64_t>(int_elem(rd(o.a, as[i]) & ab_mask, cfg.ab_type)) *
             int_elem(rd(o.b, bs[i]) & ab_mask, cfg.ab_type);
    slot = acc;
    std::uint32_t out;
    if (cfg.satfinite)
      out = static_cast<std::uint32_t>(static_cast<std::int32_t>(std::clamp<std::int64_t>(
          acc, std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::max())));
    else
      out = static_cast<std::uint32_t>(acc);
    wr(o.d, it.d, out, 32);
  }
}

void execute_wmma_mma(WarpState& state, const MmaProgram& prog, const MmaOperands& operands) {
  begin_mma(state);
  for (std::size_t i = 0; i < prog.ops().size(); ++i)
    execute_hmma(state, prog, static_cast<int>(i), operands);
}

namespace {

void check_transfer(const FragmentRef& f, std::uint64_t base, int stride, Layout layout) {
  check_ref(f, "transfer");
  const FragmentKey& key = f.map->key();
  if ((key.operand == Operand::A || key.operand == Operand::B) && key.layout != layout)
    throw ContractViolation("fragment " + to_string(key) + " used with " +
                            std::string(to_string(layout)) + " layout");
  const int lead = layout == Layout::RowMajor ? f.map->cols() : f.map->rows();
  if (stride < lead)
    throw ContractViolation("stride " + std::to_string(stride) +
                            " smaller than tile leading dimension " + std::to_string(lead));
  const int bits = f.map->elem_bits();
  if ((base * 8) % static_cast<std::uint64_t>(std::max(bits, 8)) != 0)
    throw ContractViolation("base address not aligned to the element size");
}

}  // namespace

void execute_wmma_load(WarpState& state, const FragmentRef& dst, const Memory& mem,
                       std::uint64_t base, int stride, Layout layout) {
  check_transfer(dst, base, stride, layout);
  const int bits = dst.map->elem_bits();
  for (int l = 0; l < kWarpSize; ++l) {
    auto elems = dst.map->lane(l);
    for (std::size_t e = 0; e < elems.size(); ++e)
      state.set_elem(dst, l, static_cast<int>(e),
                     mem.read_bits(element_bit_address(base, elems[e].row, elems[e].col,
                                                       layout, stride, bits),
                                   bits));
  }
}

void execute_wmma_store(const WarpState& state, const FragmentRef& src, Memory& mem,
                        std::uint64_t base, int stride, Layout layout) {
  check_transfer(src, base, stride, layout);
  const int bits = src.map->elem_bits();
  for (int l = 0; l < kWarpSize; ++l) {
    auto elems = src.map->lane(l);
    for (std::size_t e = 0; e < elems.size(); ++e) {
      if (src.map->owners(elems[e].row, elems[e].col).front().lane != l) continue;
      mem.write_bits(element_bit_address(base, elems[e].row, elems[e].col, layout, stride, bits),
                     bits, state.elem(src, l, static_cast<int>(e)));
    }
  }
}

bool duplicates_consistent(const WarpState& state, const FragmentRef& f) {
  check_ref(f, "duplicate check");
  for (int r = 0; r < f.map->rows(); ++r)
    for (int c = 0; c < f.map->cols(); ++c) {
      auto own = f.map->owners(r, c);
      for (std::size_t i = 1; i < own.size(); ++i)
        if (state.elem(f, own[i].lane, own[i].elem) != state.elem(f, own[0].lane, own[0].elem))
          return false;
    }
  return true;
}

}  // namespace tcsim
