#include "tcsim/mapping.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "tcsim/error.hpp"

namespace tcsim {

std::string_view to_string(Arch a) {
  return a == Arch::Volta ? "volta" : "turing";
}

std::string_view to_string(Operand o) {
  switch (o) {
    case Operand::A: return "A";
    case Operand::B: return "B";
    case Operand::C: return "C";
    case Operand::D: return "D";
  }
  return "?";
}

std::string_view to_string(Layout l) {
  return l == Layout::RowMajor ? "row" : "col";
}

std::string_view to_string(ElemType t) {
  switch (t) {
    case ElemType::F16: return "f16";
    case ElemType::F32: return "f32";
    case ElemType::S32: return "s32";
    case ElemType::S8: return "s8";
    case ElemType::U8: return "u8";
    case ElemType::S4: return "s4";
    case ElemType::U4: return "u4";
  }
  return "?";
}

std::string to_string(TileShape s) {
  return "m" + std::to_string(s.m) + "n" + std::to_string(s.n) + "k" +
         std::to_string(s.k);
}

std::optional<Arch> parse_arch(std::string_view s) {
  if (s == "volta") return Arch::Volta;
  if (s == "turing") return Arch::Turing;
  return std::nullopt;
}

std::optional<Layout> parse_layout(std::string_view s) {
  if (s == "row") return Layout::RowMajor;
  if (s == "col") return Layout::ColMajor;
  return std::nullopt;
}

std::optional<ElemType> parse_elem_type(std::string_view s) {
  for (ElemType t : {ElemType::F16, ElemType::F32, ElemType::S32, ElemType::S8,
                     ElemType::U8, ElemType::S4, ElemType::U4})
    if (s == to_string(t)) return t;
  return std::nullopt;
}

namespace {

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

std::optional<TileShape> parse_shape(std::string_view s) {
  TileShape shape;
  if (!s.empty() && s.front() == 'm') {
    auto n = s.find('n');
    auto k = s.find('k');
    if (n == std::string_view::npos || k == std::string_view::npos || n > k)
      return std::nullopt;
    if (!parse_int(s.substr(1, n - 1), shape.m) ||
        !parse_int(s.substr(n + 1, k - n - 1), shape.n) ||
        !parse_int(s.substr(k + 1), shape.k))
      return std::nullopt;
    return shape;
  }
  auto x1 = s.find('x');
  auto x2 = s.find('x', x1 == std::string_view::npos ? x1 : x1 + 1);
  if (x1 == std::string_view::npos || x2 == std::string_view::npos)
    return std::nullopt;
  if (!parse_int(s.substr(0, x1), shape.m) ||
      !parse_int(s.substr(x1 + 1, x2 - x1 - 1), shape.n) ||
      !parse_int(s.substr(x2 + 1), shape.k))
    return std::nullopt;
  return shape;
}

int elem_bits(ElemType t) {
  switch (t) {
    case ElemType::F16: return 16;
    case ElemType::F32:
    case ElemType::S32: return 32;
    case ElemType::S8:
    case ElemType::U8: return 8;
    case ElemType::S4:
    case ElemType::U4: return 4;
  }
  return 32;
}

int elems_per_slot(ElemType t) { return 32 / elem_bits(t); }

bool is_signed_int(ElemType t) {
  return t == ElemType::S8 || t == ElemType::S4 || t == ElemType::S32;
}

bool is_float(ElemType t) { return t == ElemType::F16 || t == ElemType::F32; }

int operand_rows(Operand op, TileShape s) {
  return op == Operand::B ? s.k : s.m;
}

int operand_cols(Operand op, TileShape s) {
  return op == Operand::A ? s.k : s.n;
}

std::string Rect::inclusive() const {
  return "[" + std::to_string(row0) + ":" + std::to_string(row1 - 1) + "," +
         std::to_string(col0) + ":" + std::to_string(col1 - 1) + "]";
}

int threadgroup_of(int lane) {
  if (lane < 0 || lane >= kWarpSize)
    throw ContractViolation("lane " + std::to_string(lane) + " outside 0..31");
  return lane / 4;
}

std::uint32_t Octet::lane_mask() const {
  std::uint32_t mask = 0;
  for (int tg : threadgroups) mask |= 0xfu << (4 * tg);
  return mask;
}

Octet octet_of(int threadgroup) {
  if (threadgroup < 0 || threadgroup >= kThreadGroups)
    throw ContractViolation("threadgroup " + std::to_string(threadgroup) +
                            " outside 0..7");
  const int id = threadgroup % kOctets;
  return Octet{id, {id, id + 4}};
}

int volta_a_segment_row(int tg) { return 8 * (tg & 1) + 4 * (tg >> 2); }
int volta_b_segment_col(int tg) { return 8 * ((tg >> 1) & 1) + 4 * (tg >> 2); }

OctetSlices octet_operand_slices(const Octet& octet, TileShape shape) {
  if (shape != kM16N16K16)
    throw UnsupportedFeature("octets are defined for Volta m16n16k16 only");
  if (octet.id < 0 || octet.id >= kOctets)
    throw ContractViolation("octet id outside 0..3");
  const int r0 = volta_a_segment_row(octet.id);  // 0 or 8
  const int c0 = volta_b_segment_col(octet.id);  // 0 or 8
  return OctetSlices{Rect{r0, r0 + 8, 0, 16}, Rect{0, 16, c0, c0 + 8},
                     Rect{r0, r0 + 8, c0, c0 + 8}};
}

std::string to_string(const FragmentKey& k) {
  return std::string(to_string(k.arch)) + " " + std::string(to_string(k.operand)) +
         " " + to_string(k.shape) + " " + std::string(to_string(k.layout)) + " " +
         std::string(to_string(k.type));
}

void validate_fragment_key(const FragmentKey& key) {
  auto fail = [&] {
    throw UnsupportedFeature("no fragment mapping for " + to_string(key));
  };
  const bool ab = key.operand == Operand::A || key.operand == Operand::B;
  if (key.arch == Arch::Volta) {
    if (key.shape != kM16N16K16) fail();
    if (ab ? key.type != ElemType::F16
           : (key.type != ElemType::F16 && key.type != ElemType::F32))
      fail();
    return;
  }
  if (key.shape == kM8N8K32) {
    if (ab) {
      if (key.type != ElemType::S4 && key.type != ElemType::U4) fail();
      // sub-byte operands are only addressable along K
      if (key.operand == Operand::A && key.layout != Layout::RowMajor) fail();
      if (key.operand == Operand::B && key.layout != Layout::ColMajor) fail();
    } else if (key.type != ElemType::S32) {
      fail();
    }
    return;
  }
  if (key.shape != kM16N16K16 && key.shape != kM32N8K16 && key.shape != kM8N32K16)
    fail();
  if (ab) {
    if (key.type != ElemType::F16 && key.type != ElemType::S8 && key.type != ElemType::U8)
      fail();
  } else if (key.type != ElemType::F16 && key.type != ElemType::F32 &&
             key.type != ElemType::S32) {
    fail();
  }
}

std::vector<Coord> volta_fragment_elements(Operand op, int lane, Layout layout,
                                           ElemType type) {
  validate_fragment_key(FragmentKey{Arch::Volta, op, kM16N16K16, layout, type});
  const int tg = threadgroup_of(lane);
  const int i = lane % 4;
  std::vector<Coord> out;
  auto push = [&](int r, int c) {
    out.push_back(Coord{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(c)});
  };

  // A row-major and B col-major: one full 16-element line per lane.
  // A col-major and B row-major: four 4-element blocks, 64 elements apart.
  const bool line_per_lane = (op == Operand::A) == (layout == Layout::RowMajor);
  switch (op) {
    case Operand::A: {
      const int r0 = volta_a_segment_row(tg);
      if (line_per_lane) {
        for (int c = 0; c < 16; ++c) push(r0 + i, c);
      } else {
        for (int blk = 0; blk < 4; ++blk)
          for (int r = 0; r < 4; ++r) push(r0 + r, i + 4 * blk);
      }
      break;
    }
    case Operand::B: {
      const int c0 = volta_b_segment_col(tg);
      if (line_per_lane) {
        for (int k = 0; k < 16; ++k) push(k, c0 + i);
      } else {
        for (int blk = 0; blk < 4; ++blk)
          for (int c = 0; c < 4; ++c) push(i + 4 * blk, c0 + c);
      }
      break;
    }
    case Operand::C:
    case Operand::D: {
      // 4x8 block per threadgroup: its A rows times its octet's B columns.
      const int r0 = volta_a_segment_row(tg);
      const int c0 = volta_b_segment_col(tg % 4);
      if (type == ElemType::F16) {
        for (int x = 0; x < 8; ++x) push(r0 + i, c0 + x);
      } else {
        for (int x = 0; x < 8; ++x)
          push(r0 + (i & 1) + 2 * ((x >> 1) & 1),
               c0 + 2 * (i >> 1) + (x & 1) + 4 * (x >> 2));
      }
      break;
    }
  }
  return out;
}

std::vector<Coord> turing_fragment_elements(Operand op, int lane, TileShape shape,
                                            ElemType type) {
  validate_fragment_key(FragmentKey{Arch::Turing, op, shape,
                                    op == Operand::B && shape == kM8N8K32
                                        ? Layout::ColMajor
                                        : Layout::RowMajor,
                                    type});
  const int tg = threadgroup_of(lane);
  const int t = lane % 4;
  std::vector<Coord> out;
  auto push = [&](int r, int c) {
    out.push_back(Coord{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(c)});
  };

  // Threadgroup g owns lines g, g+8, ... (rows of A and C/D, columns of B).
  // Along a line, lane t takes chunks t, t+4, ... where a chunk is one
  // 32-bit register of packed A/B elements, or two C/D elements.
  const bool c_like = op == Operand::C || op == Operand::D;
  const int lines = (op == Operand::B ? shape.n : shape.m) / kThreadGroups;
  const int line_len = op == Operand::A ? shape.k : op == Operand::B ? shape.k : shape.n;
  const int chunk = c_like ? 2 : elems_per_slot(type);
  const int chunks_per_lane = line_len / chunk / 4;
  for (int j = 0; j < chunks_per_lane; ++j) {
    for (int q = 0; q < lines; ++q) {
      const int line = tg + 8 * q;
      for (int e = 0; e < chunk; ++e) {
        const int along = (t + 4 * j) * chunk + e;
        if (op == Operand::B)
          push(along, line);
        else
          push(line, along);
      }
    }
  }
  return out;
}

std::vector<Coord> fragment_elements(const FragmentKey& key, int lane) {
  validate_fragment_key(key);
  if (key.arch == Arch::Volta)
    return volta_fragment_elements(key.operand, lane, key.layout, key.type);
  return turing_fragment_elements(key.operand, lane, key.shape, key.type);
}

FragmentMap::FragmentMap(FragmentKey key,
                         std::array<std::vector<Coord>, kWarpSize> lanes)
    : key_(key),
      rows_(operand_rows(key.operand, key.shape)),
      cols_(operand_cols(key.operand, key.shape)),
      lanes_(std::move(lanes)) {
  const std::size_t cells = static_cast<std::size_t>(rows_) * cols_;
  std::vector<std::vector<Owner>> per_cell(cells);
  lane_elem_.assign(cells * kWarpSize, -1);
  for (int l = 0; l < kWarpSize; ++l) {
    if (lanes_[l].size() != lanes_[0].size())
      throw ContractViolation("fragment map lanes hold different element counts");
    for (std::size_t e = 0; e < lanes_[l].size(); ++e) {
      const Coord c = lanes_[l][e];
      if (c.row >= rows_ || c.col >= cols_)
        throw ContractViolation("fragment map coordinate outside tile");
      const std::size_t cell = static_cast<std::size_t>(c.row) * cols_ + c.col;
      per_cell[cell].push_back(Owner{static_cast<std::uint8_t>(l),
                                     static_cast<std::uint8_t>(e)});
      lane_elem_[static_cast<std::size_t>(l) * cells + cell] = static_cast<std::int16_t>(e);
    }
  }
  owner_begin_.reserve(cells + 1);
  for (const auto& v : per_cell) {
    owner_begin_.push_back(static_cast<std::uint16_t>(owner_list_.size()));
    owner_list_.insert(owner_list_.end(), v.begin(), v.end());
  }
  owner_begin_.push_back(static_cast<std::uint16_t>(owner_list_.size()));
}

int FragmentMap::regs_per_lane() const {
  return (elems_per_lane() + elems_per_slot() - 1) / elems_per_slot();
}

std::span<const FragmentMap::Owner> FragmentMap::owners(int row, int col) const {
  if (row < 0 || row >= rows_ || col < 0 || col >= cols_)
    throw ContractViolation("coordinate outside tile");
  const std::size_t cell = static_cast<std::size_t>(row) * cols_ + col;
  return std::span<const Owner>(owner_list_.data() + owner_begin_[cell],
                                owner_begin_[cell + 1] - owner_begin_[cell]);
}

std::optional<FragmentMap::Owner> FragmentMap::owner_in(int row, int col,
                                                        std::uint32_t lane_mask) const {
  for (const Owner& o : owners(row, col))
    if (lane_mask & (1u << o.lane)) return o;
  return std::nullopt;
}

int FragmentMap::elem_index(int lane, int row, int col) const {
  const std::size_t cells = static_cast<std::size_t>(rows_) * cols_;
  return lane_elem_[static_cast<std::size_t>(lane) * cells +
                    static_cast<std::size_t>(row) * cols_ + col];
}

FragmentMap build_fragment_map(const FragmentKey& key) {
  std::array<std::vector<Coord>, kWarpSize> lanes;
  for (int l = 0; l < kWarpSize; ++l) lanes[l] = fragment_elements(key, l);
  return FragmentMap(key, std::move(lanes));
}

std::vector<FragmentKey> supported_fragment_keys() {
  std::vector<FragmentKey> keys;
  const Operand ops[] = {Operand::A, Operand::B, Operand::C, Operand::D};
  const Layout layouts[] = {Layout::RowMajor, Layout::ColMajor};
  const ElemType types[] = {ElemType::F16, ElemType::F32, ElemType::S32, ElemType::S8,
                            ElemType::U8,  ElemType::S4,  ElemType::U4};
  const TileShape shapes[] = {kM16N16K16, kM32N8K16, kM8N32K16, kM8N8K32};
  for (Arch arch : {Arch::Volta, Arch::Turing})
    for (TileShape s : shapes)
      for (Operand op : ops)
        for (Layout l : layouts)
          for (ElemType t : types) {
            FragmentKey key{arch, op, s, l, t};
            try {
              validate_fragment_key(key);
            } catch (const UnsupportedFeature&) {
              continue;
            }
            keys.push_back(key);
          }
  return keys;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

constexpr std::string_view kMapHeader = "# tcsim-fragment-map v1";

}  // namespace

const MappingSet& MappingSet::builtin() {
  static const MappingSet set = [] {
    MappingSet s;
    for (const FragmentKey& key : supported_fragment_keys())
      s.maps_.emplace(key, build_fragment_map(key));
    return s;
  }();
  return set;
}

const FragmentMap* MappingSet::find(const FragmentKey& key) const {
  auto it = maps_.find(key);
  return it == maps_.end() ? nullptr : &it->second;
}

const FragmentMap& MappingSet::at(const FragmentKey& key) const {
  if (const FragmentMap* m = find(key)) return *m;
  validate_fragment_key(key);
  throw UnsupportedFeature("mapping table missing for " + to_string(key));
}

void MappingSet::write(std::ostream& out) const {
  std::uint64_t h = fnv1a64("");
  auto emit = [&](const std::string& line) {
    out << line << '\n';
    h = fnv1a64(line + "\n", h);
  };
  emit(std::string(kMapHeader));
  emit("# <arch> <operand> <shape> <layout> <type> <lane> : <row,col in register-slot order>");
  for (const auto& [key, map] : maps_) {
    for (int l = 0; l < kWarpSize; ++l) {
      std::string line = to_string(key) + " " + std::to_string(l) + " :";
      for (Coord c : map.lane(l))
        line += " " + std::to_string(c.row) + "," + std::to_string(c.col);
      emit(line);
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  out << "checksum fnv1a64 " << buf << '\n';
}

MappingSet MappingSet::load(std::istream& in) {
  std::map<FragmentKey, std::array<std::vector<Coord>, kWarpSize>> pending;
  std::map<FragmentKey, int> lane_count;
  std::uint64_t h = fnv1a64("");
  std::string line;
  std::size_t lineno = 0;
  bool have_checksum = false;
  bool seen_header = false;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("checksum ", 0) == 0) {
      std::istringstream ss(line);
      std::string word, algo, hex;
      ss >> word >> algo >> hex;
      if (algo != "fnv1a64" || hex.size() != 16)
        throw ParseError("malformed checksum line", lineno, 0);
      const std::uint64_t expect = std::stoull(hex, nullptr, 16);
      if (expect != h) throw ParseError("mapping table checksum mismatch", lineno, 0);
      have_checksum = true;
      break;
    }
    h = fnv1a64(line + "\n", h);
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == kMapHeader) seen_header = true;
      continue;
    }
    std::istringstream ss(line);
    std::string arch, op, shape, layout, type, colon;
    int lane = -1;
    ss >> arch >> op >> shape >> layout >> type >> lane >> colon;
    FragmentKey key;
    auto a = parse_arch(arch);
    auto l = parse_layout(layout);
    auto t = parse_elem_type(type);
    auto s = parse_shape(shape);
    if (!a || !l || !t || !s || colon != ":" || lane < 0 || lane >= kWarpSize ||
        op.size() != 1 || op[0] < 'A' || op[0] > 'D')
      throw ParseError("malformed mapping line", lineno, 0);
    key = FragmentKey{*a, static_cast<Operand>(op[0] - 'A'), *s, *l, *t};
    std::vector<Coord> coords;
    std::string tok;
    while (ss >> tok) {
      auto comma = tok.find(',');
      int r = 0, c = 0;
      if (comma == std::string::npos || !parse_int(std::string_view(tok).substr(0, comma), r) ||
          !parse_int(std::string_view(tok).substr(comma + 1), c) || r < 0 || c < 0 ||
          r > 255 || c > 255)
        throw ParseError("malformed coordinate '" + tok + "'", lineno, 0);
      coords.push_back(Coord{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(c)});
    }
    pending[key][lane] = std::move(coords);
    ++lane_count[key];
  }
  if (!seen_header) throw ParseError("missing mapping table header", 1, 0);
  if (!have_checksum) throw ParseError("missing checksum line", lineno, 0);

  MappingSet set;
  for (auto& [key, lanes] : pending) {
    if (lane_count[key] != kWarpSize)
      throw ParseError("incomplete lane list for " + to_string(key), 0, 0);
    set.maps_.emplace(key, FragmentMap(key, std::move(lanes)));
  }
  return set;
}

MappingSet MappingSet::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mapping table file " + path);
  return load(in);
}

int max_access_bits(Operand op) {
  return (op == Operand::A || op == Operand::B) ? 128 : 32;
}

std::uint64_t element_bit_address(std::uint64_t base, int row, int col,
                                  Layout layout, int stride, int bits) {
  const std::uint64_t linear =
      layout == Layout::RowMajor
          ? static_cast<std::uint64_t>(row) * stride + col
          : static_cast<std::uint64_t>(col) * stride + row;
  return base * 8 + linear * static_cast<std::uint64_t>(bits);
}

std::array<std::vector<MemAccess>, kWarpSize> load_accesses(
    const FragmentMap& map, Layout layout, std::uint64_t base, int stride) {
  const FragmentKey& key = map.key();
  const int lead = layout == Layout::RowMajor ? map.cols() : map.rows();
  if (stride < lead)
    throw ContractViolation("stride " + std::to_string(stride) +
                            " smaller than tile leading dimension " + std::to_string(lead));
  const int bits = map.elem_bits();
  if ((base * 8) % static_cast<std::uint64_t>(std::max(bits, 8)) != 0)
    throw ContractViolation("base address not aligned to the element size");
  if (bits < 8 && (static_cast<std::uint64_t>(stride) * bits) % 8 != 0)
    throw ContractViolation("sub-byte stride must keep lines byte aligned");

  const int cap = max_access_bits(key.operand);
  std::array<std::vector<MemAccess>, kWarpSize> out;
  for (int l = 0; l < kWarpSize; ++l) {
    auto elems = map.lane(l);
    std::size_t e = 0;
    while (e < elems.size()) {
      // maximal run of address-contiguous elements in slot order
      const std::uint64_t start =
          element_bit_address(base, elems[e].row, elems[e].col, layout, stride, bits);
      std::size_t run = 1;
      while (e + run < elems.size() &&
             element_bit_address(base, elems[e + run].row, elems[e + run].col, layout,
                                 stride, bits) == start + run * bits)
        ++run;

      std::uint64_t pos = start;
      std::uint64_t remaining = run * bits;
      int first = static_cast<int>(e);
      while (remaining > 0) {
        int w = cap;
        while (w > 8 && (pos % w != 0 || static_cast<std::uint64_t>(w) > remaining)) w /= 2;
        if (pos % 8 != 0 || static_cast<std::uint64_t>(w) > remaining || w < bits)
          throw UnsupportedFeature("fragment elements not byte addressable");
        out[l].push_back(MemAccess{l, pos / 8, w, first, w / bits});
        first += w / bits;
        pos += w;
        remaining -= w;
      }
      e += run;
    }
  }
  return out;
}

}  // namespace tcsim
