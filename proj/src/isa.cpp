#include "tcsim/isa.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include "tcsim/error.hpp"

namespace tcsim {

std::string_view to_string(WmmaKind k) {
  switch (k) {
    case WmmaKind::LoadA: return "load.a";
    case WmmaKind::LoadB: return "load.b";
    case WmmaKind::LoadC: return "load.c";
    case WmmaKind::Mma: return "mma";
    case WmmaKind::StoreD: return "store.d";
  }
  return "?";
}

std::string FragOperand::text() const {
  std::string s;
  if (!regs.empty()) {
    s = "{";
    for (std::size_t i = 0; i < regs.size(); ++i) s += (i ? ", " : "") + regs[i];
    s += "}";
  } else {
    s = name;
  }
  if (reuse) s += ".reuse";
  return s;
}

std::string AddrOperand::text() const {
  if (offset == 0) return "[" + base + "]";
  return "[" + base + (offset > 0 ? "+" : "") + std::to_string(offset) + "]";
}

Operand PtxWmmaInstr::operand() const {
  switch (kind) {
    case WmmaKind::LoadA: return Operand::A;
    case WmmaKind::LoadB: return Operand::B;
    case WmmaKind::LoadC: return Operand::C;
    default: return Operand::D;
  }
}

int PtxWmmaInstr::effective_stride() const {
  if (stride) return *stride;
  const Operand op = operand();
  return layout == Layout::RowMajor ? operand_cols(op, shape) : operand_rows(op, shape);
}

MmaConfig PtxWmmaInstr::mma_config(Arch arch) const {
  MmaConfig c;
  c.arch = arch;
  c.shape = shape;
  c.ab_type = ab_type;
  c.ctype = ctype;
  c.dtype = dtype;
  c.a_layout = a_layout;
  c.b_layout = b_layout;
  c.satfinite = satfinite;
  return c;
}

FragmentKey PtxWmmaInstr::fragment_key(Arch arch) const {
  return FragmentKey{arch, operand(), shape, layout, type};
}

// ---- parser ----

namespace {

struct Cursor {
  std::string_view s;
  std::size_t pos = 0;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError(msg, line, at + 1);
  }
  [[noreturn]] void fail(const std::string& msg) const { fail(msg, pos); }

  void ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eat(char c) {
    ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(char c, const char* what) {
    if (!eat(c)) fail(std::string("expected ") + what);
  }
  bool at_end() {
    ws();
    return pos >= s.size();
  }
  static bool ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '%' || c == '$';
  }
  static bool ident_char(char c) {
    return ident_start(c) || std::isdigit(static_cast<unsigned char>(c));
  }
  std::string ident(const char* what) {
    ws();
    if (pos >= s.size() || !ident_start(s[pos])) fail(std::string("expected ") + what);
    const std::size_t b = pos;
    while (pos < s.size() && ident_char(s[pos])) ++pos;
    return std::string(s.substr(b, pos - b));
  }
  std::int64_t integer(const char* what) {
    ws();
    const std::size_t b = pos;
    const bool plus = pos < s.size() && s[pos] == '+';
    if (pos < s.size() && (s[pos] == '-' || plus)) ++pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data() + b + (plus ? 1 : 0), s.data() + pos, v);
    if (ec != std::errc() || p != s.data() + pos) fail(std::string("expected ") + what, b);
    return v;
  }
};

FragOperand parse_frag(Cursor& cur, bool allow_reuse) {
  FragOperand f;
  if (cur.eat('{')) {
    do {
      f.regs.push_back(cur.ident("register name"));
    } while (cur.eat(','));
    cur.expect('}', "'}' closing the register list");
  } else {
    f.name = cur.ident("fragment operand");
  }
  cur.ws();
  if (cur.s.substr(cur.pos).starts_with(".reuse")) {
    if (!allow_reuse) cur.fail(".reuse is only valid on mma source operands");
    f.reuse = true;
    cur.pos += 6;
  }
  return f;
}

AddrOperand parse_addr(Cursor& cur) {
  AddrOperand a;
  cur.expect('[', "'[' starting an address operand");
  a.base = cur.ident("address base name");
  cur.ws();
  if (cur.pos < cur.s.size() && (cur.s[cur.pos] == '+' || cur.s[cur.pos] == '-'))
    a.offset = cur.integer("address offset");
  cur.expect(']', "']' closing the address operand");
  return a;
}

struct Qual {
  std::string_view text;
  std::size_t col;
};

}  // namespace

PtxWmmaInstr parse_wmma(std::string_view text, std::size_t line) {
  if (auto c = text.find("//"); c != std::string_view::npos) text = text.substr(0, c);
  Cursor cur{text, 0, line};
  cur.ws();
  const std::size_t op_begin = cur.pos;
  while (cur.pos < text.size() && !std::isspace(static_cast<unsigned char>(text[cur.pos]))) ++cur.pos;
  const std::string_view opcode = text.substr(op_begin, cur.pos - op_begin);
  if (opcode.empty()) cur.fail("empty instruction", op_begin);

  std::vector<Qual> q;
  for (std::size_t b = 0; b <= opcode.size();) {
    std::size_t e = opcode.find('.', b);
    if (e == std::string_view::npos) e = opcode.size();
    q.push_back({opcode.substr(b, e - b), op_begin + b});
    b = e + 1;
  }
  std::size_t qi = 0;
  auto take = [&](const char* what) -> Qual {
    if (qi >= q.size())
      cur.fail(std::string("missing ") + what + " qualifier", op_begin + opcode.size());
    if (q[qi].text.empty()) cur.fail(std::string("empty ") + what + " qualifier", q[qi].col);
    return q[qi++];
  };
  auto peek = [&]() -> std::string_view { return qi < q.size() ? q[qi].text : std::string_view(); };

  PtxWmmaInstr in;
  if (take("opcode").text != "wmma") cur.fail("expected a wmma instruction", op_begin);
  const Qual verb = take("operation");
  if (verb.text == "load" || verb.text == "store") {
    const Qual which = take("operand");
    if (verb.text == "load" && which.text == "a") in.kind = WmmaKind::LoadA;
    else if (verb.text == "load" && which.text == "b") in.kind = WmmaKind::LoadB;
    else if (verb.text == "load" && which.text == "c") in.kind = WmmaKind::LoadC;
    else if (verb.text == "store" && which.text == "d") in.kind = WmmaKind::StoreD;
    else cur.fail("unknown operand '" + std::string(which.text) + "' for wmma." + std::string(verb.text), which.col);
  } else if (verb.text == "mma") {
    in.kind = WmmaKind::Mma;
  } else {
    cur.fail("unknown wmma operation '" + std::string(verb.text) + "'", verb.col);
  }

  const Qual sync = take("sync");
  if (sync.text != "sync") cur.fail("expected .sync, found '" + std::string(sync.text) + "'", sync.col);
  if (peek() == "aligned") {
    in.aligned = true;
    ++qi;
  }
  auto layout_q = [&](const char* what) {
    const Qual l = take(what);
    auto v = parse_layout(l.text);
    if (!v) cur.fail("unknown layout qualifier '" + std::string(l.text) + "'", l.col);
    return *v;
  };
  auto shape_q = [&]() {
    const Qual s = take("shape");
    auto v = parse_shape(s.text);
    if (!v || !s.text.starts_with("m") ||
        (*v != kM16N16K16 && *v != kM32N8K16 && *v != kM8N32K16 && *v != kM8N8K32))
      cur.fail("unknown shape qualifier '" + std::string(s.text) + "'", s.col);
    return *v;
  };
  auto type_q = [&](const char* what, std::initializer_list<ElemType> allowed) {
    const Qual t = take(what);
    auto v = parse_elem_type(t.text);
    if (!v || std::find(allowed.begin(), allowed.end(), *v) == allowed.end())
      cur.fail("invalid " + std::string(what) + " qualifier '" + std::string(t.text) + "'", t.col);
    return *v;
  };

  if (in.kind == WmmaKind::Mma) {
    in.a_layout = layout_q("alayout");
    in.b_layout = layout_q("blayout");
    in.shape = shape_q();
    if (peek() == "s32") {
      ++qi;
      in.dtype = ElemType::S32;
      in.ab_type = type_q("atype", {ElemType::S8, ElemType::U8, ElemType::S4, ElemType::U4});
      const Qual bq = q[qi < q.size() ? qi : q.size() - 1];
      const ElemType bt = type_q("btype", {ElemType::S8, ElemType::U8, ElemType::S4, ElemType::U4});
      if (bt != in.ab_type) cur.fail("atype and btype must match", bq.col);
      in.ctype = type_q("ctype", {ElemType::S32});
    } else {
      in.dtype = type_q("dtype", {ElemType::F16, ElemType::F32});
      in.ctype = type_q("ctype", {ElemType::F16, ElemType::F32});
      in.ab_type = ElemType::F16;
    }
    if (peek() == "satfinite") {
      in.satfinite = true;
      ++qi;
    }
  } else {
    in.layout = layout_q("layout");
    in.shape = shape_q();
    if (peek() == "global" || peek() == "shared") in.space = std::string(q[qi++].text);
    if (in.kind == WmmaKind::LoadA || in.kind == WmmaKind::LoadB)
      in.type = type_q("type", {ElemType::F16, ElemType::S8, ElemType::U8, ElemType::S4, ElemType::U4});
    else
      in.type = type_q("type", {ElemType::F16, ElemType::F32, ElemType::S32});
  }
  if (qi < q.size()) cur.fail("unexpected qualifier '" + std::string(q[qi].text) + "'", q[qi].col);

  switch (in.kind) {
    case WmmaKind::Mma:
      for (int i = 0; i < 4; ++i) {
        if (i) cur.expect(',', "',' between operands");
        in.frags.push_back(parse_frag(cur, i > 0));
      }
      break;
    case WmmaKind::StoreD:
      in.addr = parse_addr(cur);
      cur.expect(',', "',' after the address");
      in.frags.push_back(parse_frag(cur, false));
      break;
    default:
      in.frags.push_back(parse_frag(cur, false));
      cur.expect(',', "',' after the fragment");
      in.addr = parse_addr(cur);
      break;
  }
  if (in.kind != WmmaKind::Mma && cur.eat(',')) {
    const std::size_t at = cur.pos;
    const std::int64_t s = cur.integer("stride");
    if (s <= 0 || s > (1 << 24)) cur.fail("stride out of range", at);
    in.stride = static_cast<int>(s);
  }
  cur.expect(';', "';' ending the instruction");
  if (!cur.at_end()) cur.fail("unexpected trailing text");
  return in;
}

std::string print(const PtxWmmaInstr& in) {
  std::string s = "wmma.";
  switch (in.kind) {
    case WmmaKind::Mma: s += "mma"; break;
    case WmmaKind::StoreD: s += "store.d"; break;
    default: s += std::string(to_string(in.kind)); break;
  }
  s += ".sync";
  if (in.aligned) s += ".aligned";
  if (in.kind == WmmaKind::Mma) {
    s += "." + std::string(to_string(in.a_layout)) + "." + std::string(to_string(in.b_layout)) +
         "." + to_string(in.shape);
    if (in.dtype == ElemType::S32)
      s += ".s32." + std::string(to_string(in.ab_type)) + "." + std::string(to_string(in.ab_type)) +
           ".s32";
    else
      s += "." + std::string(to_string(in.dtype)) + "." + std::string(to_string(in.ctype));
    if (in.satfinite) s += ".satfinite";
    s += " ";
    for (std::size_t i = 0; i < in.frags.size(); ++i) s += (i ? ", " : "") + in.frags[i].text();
  } else {
    s += "." + std::string(to_string(in.layout)) + "." + to_string(in.shape);
    if (!in.space.empty()) s += "." + in.space;
    s += "." + std::string(to_string(in.type)) + " ";
    if (in.kind == WmmaKind::StoreD)
      s += in.addr.text() + ", " + in.frags.at(0).text();
    else
      s += in.frags.at(0).text() + ", " + in.addr.text();
    if (in.stride) s += ", " + std::to_string(*in.stride);
  }
  return s + ";";
}

// ---- micro-ops ----

RegisterPair pair_of(int reg) { return RegisterPair{(reg & 1) ? reg + 1 : reg}; }

std::string MicroOp::mnemonic() const {
  switch (kind) {
    case MicroOpKind::Load: return "LD" + std::to_string(width_bits);
    case MicroOpKind::Store: return "ST" + std::to_string(width_bits);
    case MicroOpKind::Hmma: return "HMMA";
  }
  return "?";
}

namespace {

std::string hmma_variant(const MicroOp& op) {
  std::string s = "HMMA.";
  if (op.arch == Arch::Volta) s += "884";
  else s += std::to_string(op.shape.m) + std::to_string(op.shape.n) + std::to_string(op.shape.k);
  switch (op.mode) {
    case PrecisionMode::MixedFP32Acc: s += ".F32"; break;
    case PrecisionMode::FP16: s += ".F16"; break;
    case PrecisionMode::Int8: s += ".S8"; break;
    case PrecisionMode::Int4: s += ".S4"; break;
  }
  if (op.step >= 0) s += ".STEP" + std::to_string(op.step);
  return s;
}

}  // namespace

std::string format_microop(const MicroOp& op) {
  char buf[40];
  if (op.kind == MicroOpKind::Hmma) {
    std::string s = hmma_variant(op) + " i=" + std::to_string(op.instr) +
                    " set=" + std::to_string(op.set) + " ";
    for (int i = 0; i < 4; ++i) {
      s += (i ? ", " : "") + op.operands[i].text();
      if (op.reuse[i]) s += ".reuse";
    }
    return s;
  }
  std::string s = op.mnemonic() + " i=" + std::to_string(op.instr) +
                  " tx=" + std::to_string(op.transactions) + " lanes=";
  for (std::size_t i = 0; i < op.lanes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%u:0x%llx", i ? "," : "", op.lanes[i].lane,
                  static_cast<unsigned long long>(op.lanes[i].addr));
    s += buf;
  }
  if (op.fence_after) s += " fence";
  return s;
}

std::vector<Transaction> coalesce(const std::vector<LaneAddr>& lanes, int width_bits,
                                  int sector_bytes) {
  if (sector_bytes <= 0) throw ContractViolation("sector size must be positive");
  const std::uint64_t bytes = std::max(1, width_bits / 8);
  std::map<std::uint64_t, std::uint32_t> sectors;
  for (const LaneAddr& la : lanes) {
    const std::uint64_t first = la.addr / sector_bytes;
    const std::uint64_t last = (la.addr + bytes - 1) / sector_bytes;
    for (std::uint64_t s = first; s <= last; ++s) sectors[s] |= 1u << la.lane;
  }
  std::vector<Transaction> out;
  out.reserve(sectors.size());
  for (const auto& [s, mask] : sectors) out.push_back(Transaction{s * sector_bytes, mask});
  return out;
}

RegisterAllocator::RegisterAllocator(int first) : next_(first) {
  if (first < 1 || !(first & 1))
    throw ContractViolation("register base must be odd so pairs stay inside a fragment");
}

int RegisterAllocator::allocate(const std::string& name, int regs) {
  if (auto it = regs_.find(name); it != regs_.end()) {
    if (regs > it->second.second)
      throw ContractViolation("fragment '" + name + "' reused with a larger register footprint");
    return it->second.first;
  }
  const int count = regs + (regs & 1);
  if (next_ + count > WarpState::kRegs)
    throw ContractViolation("out of registers allocating fragment '" + name + "'");
  const int base = next_;
  regs_[name] = {base, count};
  next_ += count;
  return base;
}

std::optional<int> RegisterAllocator::find(const std::string& name) const {
  if (auto it = regs_.find(name); it != regs_.end()) return it->second.first;
  return std::nullopt;
}

namespace {

std::vector<MicroOp> expand_memory(const PtxWmmaInstr& instr, Arch arch, std::uint64_t base,
                                   int first_reg, const MappingSet& maps, int sector_bytes,
                                   MicroOpKind kind) {
  const FragmentKey key = instr.fragment_key(arch);
  validate_fragment_key(key);
  const FragmentMap& map = maps.at(key);
  const auto acc = load_accesses(map, instr.layout, base, instr.effective_stride());
  const int per = map.elems_per_slot();

  std::map<std::pair<std::size_t, int>, MicroOp> groups;
  std::map<std::pair<std::size_t, int>, std::set<int>> pairs;
  for (int l = 0; l < kWarpSize; ++l)
    for (std::size_t j = 0; j < acc[l].size(); ++j) {
      const MemAccess& a = acc[l][j];
      auto gk = std::make_pair(j, a.width_bits);
      MicroOp& op = groups[gk];
      op.kind = kind;
      op.source = instr.kind;
      op.width_bits = a.width_bits;
      op.lanes.push_back(LaneAddr{static_cast<std::uint8_t>(l), a.byte_addr});
      for (int e = a.first_elem; e < a.first_elem + a.elem_count; ++e)
        pairs[gk].insert(pair_of(first_reg + e / per).encoded);
    }
  std::vector<MicroOp> out;
  for (auto& [gk, op] : groups) {
    auto& p = kind == MicroOpKind::Load ? op.dst_pairs : op.src_pairs;
    p.assign(pairs[gk].begin(), pairs[gk].end());
    op.transactions = static_cast<int>(coalesce(op.lanes, op.width_bits, sector_bytes).size());
    out.push_back(std::move(op));
  }
  return out;
}

}  // namespace

std::vector<MicroOp> expand_load(const PtxWmmaInstr& instr, Arch arch, std::uint64_t base,
                                 int first_reg, const MappingSet& maps, int sector_bytes) {
  if (instr.kind != WmmaKind::LoadA && instr.kind != WmmaKind::LoadB && instr.kind != WmmaKind::LoadC)
    throw ContractViolation("expand_load needs a wmma.load instruction");
  return expand_memory(instr, arch, base, first_reg, maps, sector_bytes, MicroOpKind::Load);
}

std::vector<MicroOp> expand_store(const PtxWmmaInstr& instr, Arch arch, std::uint64_t base,
                                  int first_reg, const MappingSet& maps, int sector_bytes) {
  if (instr.kind != WmmaKind::StoreD) throw ContractViolation("expand_store needs wmma.store.d");
  return expand_memory(instr, arch, base, first_reg, maps, sector_bytes, MicroOpKind::Store);
}

std::vector<MicroOp> expand_mma(const MmaProgram& prog, std::array<int, 4> bases, int chain,
                                int instr, std::array<bool, 4> reuse) {
  const auto [d_base, a_base, b_base, c_base] = bases;
  std::vector<MicroOp> out;
  for (std::size_t i = 0; i < prog.ops().size(); ++i) {
    const HmmaOp& h = prog.ops()[i];
    const MmaProgram::OpPlan& p = prog.plan(static_cast<int>(i));
    MicroOp op;
    op.kind = MicroOpKind::Hmma;
    op.instr = instr;
    op.arch = h.arch;
    op.shape = h.shape;
    op.mode = h.mode;
    op.set = h.set;
    op.step = h.step;
    op.fedp = h.fedp_count();
    op.chain = chain;
    op.reuse = reuse;
    op.operands[0] = pair_of(d_base + p.d_regs.front());
    op.operands[1] = pair_of(a_base + p.a_regs.front());
    op.operands[2] = pair_of(b_base + p.b_regs.front());
    op.operands[3] = !p.c_regs.empty() ? pair_of(c_base + p.c_regs.front())
                                       : pair_of(d_base + p.acc_regs.front());
    std::set<int> src, dst;
    for (int r : p.a_regs) src.insert(pair_of(a_base + r).encoded);
    for (int r : p.b_regs) src.insert(pair_of(b_base + r).encoded);
    for (int r : p.c_regs) src.insert(pair_of(c_base + r).encoded);
    for (int r : p.acc_regs) src.insert(pair_of(d_base + r).encoded);
    for (int r : p.d_regs) dst.insert(pair_of(d_base + r).encoded);
    op.src_pairs.assign(src.begin(), src.end());
    op.dst_pairs.assign(dst.begin(), dst.end());
    out.push_back(std::move(op));
  }
  return out;
}

}  // namespace tcsim
