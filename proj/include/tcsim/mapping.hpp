#pragma once

// Operand-element to warp-lane distribution for WMMA fragments.
//
// A FragmentMap lists, for every lane of the warp, the tile coordinates that
// lane holds. The order of a lane's list is its register-slot order: element e
// lives in register (first + e / per_slot) at bit offset (e % per_slot) * bits.
// The same tables drive wmma.load/store data movement, the functional HMMA
// engine and the SASS-level load expansion.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tcsim/numerics.hpp"

namespace tcsim {

inline constexpr int kWarpSize = 32;
inline constexpr int kThreadGroups = 8;
inline constexpr int kOctets = 4;

enum class Arch { Volta, Turing };
enum class Operand { A, B, C, D };
enum class Layout { RowMajor, ColMajor };
enum class ElemType { F16, F32, S32, S8, U8, S4, U4 };

struct TileShape {
  int m = 16;
  int n = 16;
  int k = 16;
  friend constexpr bool operator==(const TileShape&, const TileShape&) = default;
  friend constexpr auto operator<=>(const TileShape&, const TileShape&) = default;
};

inline constexpr TileShape kM16N16K16{16, 16, 16};
inline constexpr TileShape kM32N8K16{32, 8, 16};
inline constexpr TileShape kM8N32K16{8, 32, 16};
inline constexpr TileShape kM8N8K32{8, 8, 32};

std::string_view to_string(Arch a);
std::string_view to_string(Operand o);
std::string_view to_string(Layout l);
std::string_view to_string(ElemType t);
std::string to_string(TileShape s);  // "m16n16k16"

std::optional<Arch> parse_arch(std::string_view s);
std::optional<Layout> parse_layout(std::string_view s);      // row | col
std::optional<ElemType> parse_elem_type(std::string_view s); // f16 | f32 | s32 | s8 | u8 | s4 | u4
std::optional<TileShape> parse_shape(std::string_view s);    // m16n16k16 or 16x16x16

int elem_bits(ElemType t);
int elems_per_slot(ElemType t);  // elements packed per 32-bit register
bool is_signed_int(ElemType t);
bool is_float(ElemType t);

// Rows x cols of an operand tile: A is MxK, B is KxN, C and D are MxN.
int operand_rows(Operand op, TileShape s);
int operand_cols(Operand op, TileShape s);

// Half-open rectangle in tile coordinates.
struct Rect {
  int row0 = 0, row1 = 0;
  int col0 = 0, col1 = 0;

  int rows() const { return row1 - row0; }
  int cols() const { return col1 - col0; }
  bool contains(int r, int c) const {
    return r >= row0 && r < row1 && c >= col0 && c < col1;
  }
  // "[r0:r1,c0:c1]" with inclusive bounds.
  std::string inclusive() const;
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct Coord {
  std::uint8_t row = 0;
  std::uint8_t col = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

int threadgroup_of(int lane);

struct Octet {
  int id = 0;
  std::array<int, 2> threadgroups{};  // {X, X + 4}

  std::uint32_t lane_mask() const;
};

Octet octet_of(int threadgroup);

struct OctetSlices {
  Rect a;  // 8x16 slice of operand A
  Rect b;  // 16x8 slice of operand B
  Rect c;  // 8x8 subtile of C/D the octet produces
};

// Volta m16n16k16 only.
OctetSlices octet_operand_slices(const Octet& octet, TileShape shape);

// First row of the 4-row A segment (and C/D rows) owned by a Volta threadgroup.
int volta_a_segment_row(int threadgroup);
// First column of the 4-column B segment owned by a Volta threadgroup.
int volta_b_segment_col(int threadgroup);

struct FragmentKey {
  Arch arch = Arch::Volta;
  Operand operand = Operand::A;
  TileShape shape = kM16N16K16;
  Layout layout = Layout::RowMajor;
  ElemType type = ElemType::F16;

  friend auto operator<=>(const FragmentKey&, const FragmentKey&) = default;
  friend bool operator==(const FragmentKey&, const FragmentKey&) = default;
};

std::string to_string(const FragmentKey& k);

// Throws UnsupportedFeature when the combination is not modeled.
void validate_fragment_key(const FragmentKey& key);

std::vector<Coord> volta_fragment_elements(Operand op, int lane, Layout layout,
                                           ElemType type);
std::vector<Coord> turing_fragment_elements(Operand op, int lane,
                                            TileShape shape, ElemType type);
std::vector<Coord> fragment_elements(const FragmentKey& key, int lane);

class FragmentMap {
 public:
  struct Owner {
    std::uint8_t lane;
    std::uint8_t elem;  // index into the lane's element list
  };

  FragmentMap(FragmentKey key, std::array<std::vector<Coord>, kWarpSize> lanes);

  const FragmentKey& key() const { return key_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int elem_bits() const { return tcsim::elem_bits(key_.type); }
  int elems_per_slot() const { return tcsim::elems_per_slot(key_.type); }
  // Elements held by every lane (all lanes hold the same count).
  int elems_per_lane() const { return static_cast<int>(lanes_[0].size()); }
  // 32-bit registers per lane for this fragment.
  int regs_per_lane() const;

  std::span<const Coord> lane(int lane) const { return lanes_.at(lane); }
  std::span<const Owner> owners(int row, int col) const;
  // Owner restricted to the lanes in `lane_mask`; nullopt if none.
  std::optional<Owner> owner_in(int row, int col, std::uint32_t lane_mask) const;
  // Element index of (row, col) within `lane`, or -1.
  int elem_index(int lane, int row, int col) const;

  friend bool operator==(const FragmentMap& a, const FragmentMap& b) {
    return a.key_ == b.key_ && a.lanes_ == b.lanes_;
  }

 private:
  FragmentKey key_;
  int rows_;
  int cols_;
  std::array<std::vector<Coord>, kWarpSize> lanes_;
  std::vector<std::uint16_t> owner_begin_;  // rows*cols + 1 offsets
  std::vector<Owner> owner_list_;
  std::vector<std::int16_t> lane_elem_;  // [lane][row*cols+col] -> elem or -1
};

FragmentMap build_fragment_map(const FragmentKey& key);

// Every fragment map the simulator supports, keyed by FragmentKey.
//
// Text serialization (one line per lane):
//   <arch> <operand> <shape> <layout> <type> <lane> : r,c r,c ...
// preceded by a "# tcsim-fragment-map v1" header and followed by
//   checksum fnv1a64 <16 hex digits>
// computed over every preceding line including its '\n'.
class MappingSet {
 public:
  static const MappingSet& builtin();
  static MappingSet load(std::istream& in);  // verifies the checksum
  static MappingSet load_file(const std::string& path);

  void write(std::ostream& out) const;

  const FragmentMap& at(const FragmentKey& key) const;
  const FragmentMap* find(const FragmentKey& key) const;
  const std::map<FragmentKey, FragmentMap>& maps() const { return maps_; }

  friend bool operator==(const MappingSet&, const MappingSet&) = default;

 private:
  std::map<FragmentKey, FragmentMap> maps_;
};

std::vector<FragmentKey> supported_fragment_keys();

std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t seed = 0xcbf29ce484222325ull);

// One per-lane memory access of a fragment load/store.
struct MemAccess {
  int lane = 0;
  std::uint64_t byte_addr = 0;
  int width_bits = 32;  // 8, 16, 32, 64 or 128
  int first_elem = 0;   // first fragment element covered
  int elem_count = 0;   // consecutive fragment elements covered

  friend bool operator==(const MemAccess&, const MemAccess&) = default;
};

// Widest access used for a fragment of `op` (A/B: 128 bits, C/D: 32 bits).
int max_access_bits(Operand op);

// Byte address of tile element (row, col) relative to `base`, with `stride`
// elements between consecutive rows (row-major) or columns (col-major).
// Returned in bits to cover sub-byte element types.
std::uint64_t element_bit_address(std::uint64_t base, int row, int col,
                                  Layout layout, int stride, int bits);

// Per-lane memory accesses that gather exactly the lane's fragment elements,
// in register-slot order. Contiguous runs are split into the widest aligned
// accesses up to max_access_bits(op); misaligned runs fall back to narrower
// accesses. Throws ContractViolation when stride is smaller than the tile's
// leading dimension.
std::array<std::vector<MemAccess>, kWarpSize> load_accesses(
    const FragmentMap& map, Layout layout, std::uint64_t base, int stride);

}  // namespace tcsim
