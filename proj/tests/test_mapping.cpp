#include <sstream>

#include "doctest.h"
#include "tcsim/error.hpp"
#include "tcsim/mapping.hpp"

using namespace tcsim;

namespace {

int expected_multiplicity(const FragmentKey& k) {
  return k.arch == Arch::Volta && (k.operand == Operand::A || k.operand == Operand::B) ? 2 : 1;
}

FragmentKey key(Arch arch, Operand op, TileShape s, Layout l, ElemType t) {
  return FragmentKey{arch, op, s, l, t};
}

}  // namespace

TEST_CASE("threadgroups and octets") {
  CHECK(threadgroup_of(0) == 0);
  CHECK(threadgroup_of(31) == 7);
  CHECK(threadgroup_of(13) == 3);
  CHECK_THROWS_AS(threadgroup_of(32), ContractViolation);
  CHECK_THROWS_AS(threadgroup_of(-1), ContractViolation);

  const Octet o2 = octet_of(2);
  CHECK(o2.id == 2);
  CHECK(o2.threadgroups == std::array<int, 2>{2, 6});
  CHECK(octet_of(4).threadgroups == std::array<int, 2>{0, 4});
  CHECK(octet_of(7).id == 3);
  CHECK(octet_of(7).threadgroups == std::array<int, 2>{3, 7});
  CHECK_THROWS_AS(octet_of(8), ContractViolation);
  for (int g = 0; g < 8; ++g) {
    const Octet o = octet_of(g);
    CHECK(o.threadgroups[1] - o.threadgroups[0] == 4);
    for (int lane = 0; lane < 32; ++lane)
      CHECK(((o.lane_mask() >> lane) & 1) == (lane / 4 % 4 == o.id));
  }
}

TEST_CASE("octet operand slices") {
  auto s0 = octet_operand_slices(octet_of(0), kM16N16K16);
  CHECK(s0.a.inclusive() == "[0:7,0:15]");
  CHECK(s0.b.inclusive() == "[0:15,0:7]");
  CHECK(s0.c.inclusive() == "[0:7,0:7]");
  auto s3 = octet_operand_slices(octet_of(3), kM16N16K16);
  CHECK(s3.a.inclusive() == "[8:15,0:15]");
  CHECK(s3.b.inclusive() == "[0:15,8:15]");
  CHECK(s3.c.inclusive() == "[8:15,8:15]");
  // the four octets tile C exactly once
  int cover[16][16] = {};
  for (int o = 0; o < 4; ++o) {
    const Rect c = octet_operand_slices(octet_of(o), kM16N16K16).c;
    for (int r = c.row0; r < c.row1; ++r)
      for (int col = c.col0; col < c.col1; ++col) ++cover[r][col];
  }
  for (auto& row : cover)
    for (int v : row) CHECK(v == 1);
}

TEST_CASE("Volta A fragment examples") {
  const FragmentMap& a = MappingSet::builtin().at(
      key(Arch::Volta, Operand::A, kM16N16K16, Layout::RowMajor, ElemType::F16));
  REQUIRE(a.lane(0).size() == 16);
  for (int c = 0; c < 16; ++c) {
    CHECK(a.lane(0)[c] == Coord{0, static_cast<std::uint8_t>(c)});
    CHECK(a.lane(8)[c] == Coord{0, static_cast<std::uint8_t>(c)});  // threadgroup 2 duplicates 0
  }
  CHECK(a.regs_per_lane() == 8);
}

TEST_CASE("every fragment map covers its tile with the expected multiplicity") {
  const auto keys = supported_fragment_keys();
  CHECK(keys.size() == MappingSet::builtin().maps().size());
  for (const FragmentKey& k : keys) {
    CAPTURE(to_string(k));
    const FragmentMap& m = MappingSet::builtin().at(k);
    REQUIRE(m.rows() == operand_rows(k.operand, k.shape));
    REQUIRE(m.cols() == operand_cols(k.operand, k.shape));
    std::vector<int> count(m.rows() * m.cols(), 0);
    const std::size_t per_lane = m.lane(0).size();
    for (int lane = 0; lane < 32; ++lane) {
      REQUIRE(m.lane(lane).size() == per_lane);
      for (const Coord c : m.lane(lane)) {
        REQUIRE(c.row < m.rows());
        REQUIRE(c.col < m.cols());
        ++count[c.row * m.cols() + c.col];
      }
    }
    const int want = expected_multiplicity(k);
    for (int v : count) REQUIRE(v == want);
    // registers hold whole 32-bit slots
    REQUIRE((per_lane * elem_bits(k.type)) % 32 == 0);
    // owner index agrees with the lane lists
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        REQUIRE(static_cast<int>(m.owners(r, c).size()) == want);
        for (auto o : m.owners(r, c)) REQUIRE(m.lane(o.lane)[o.elem] == Coord{std::uint8_t(r), std::uint8_t(c)});
      }
  }
}

TEST_CASE("Volta duplicated A/B segments stay inside one octet") {
  for (Operand op : {Operand::A, Operand::B})
    for (Layout l : {Layout::RowMajor, Layout::ColMajor}) {
      const FragmentMap& m = MappingSet::builtin().at(key(Arch::Volta, op, kM16N16K16, l, ElemType::F16));
      for (int o = 0; o < 4; ++o) {
        const OctetSlices s = octet_operand_slices(octet_of(o), kM16N16K16);
        const Rect need = op == Operand::A ? s.a : s.b;
        for (int r = need.row0; r < need.row1; ++r)
          for (int c = need.col0; c < need.col1; ++c)
            CHECK(m.owner_in(r, c, octet_of(o).lane_mask()).has_value());
      }
    }
}

TEST_CASE("unsupported combinations are rejected") {
  CHECK_THROWS_AS(validate_fragment_key(key(Arch::Volta, Operand::A, kM16N16K16, Layout::RowMajor, ElemType::S8)),
                  UnsupportedFeature);
  CHECK_THROWS_AS(validate_fragment_key(key(Arch::Volta, Operand::A, kM32N8K16, Layout::RowMajor, ElemType::F16)),
                  UnsupportedFeature);
  CHECK_THROWS_AS(validate_fragment_key(key(Arch::Turing, Operand::A, kM8N8K32, Layout::ColMajor, ElemType::S4)),
                  UnsupportedFeature);
  CHECK_THROWS_AS(validate_fragment_key(key(Arch::Turing, Operand::B, kM8N8K32, Layout::RowMajor, ElemType::U4)),
                  UnsupportedFeature);
  CHECK_NOTHROW(validate_fragment_key(key(Arch::Turing, Operand::B, kM8N8K32, Layout::ColMajor, ElemType::U4)));
  CHECK_THROWS_AS(validate_fragment_key(key(Arch::Turing, Operand::C, kM16N16K16, Layout::RowMajor, ElemType::S8)),
                  UnsupportedFeature);
}

TEST_CASE("mapping file round trip and checksum") {
  std::stringstream ss;
  MappingSet::builtin().write(ss);
  const std::string text = ss.str();
  std::istringstream in(text);
  CHECK(MappingSet::load(in) == MappingSet::builtin());

  // swap two coordinates on one line: checksum must catch it
  std::string bad = text;
  const auto p = bad.find(": 0,0 0,1");
  REQUIRE(p != std::string::npos);
  bad.replace(p, 9, ": 0,1 0,0");
  std::istringstream in2(bad);
  CHECK_THROWS_AS(MappingSet::load(in2), ParseError);

  std::istringstream empty("");
  CHECK_THROWS_AS(MappingSet::load(empty), ParseError);
}

TEST_CASE("data file matches the built-in tables") {
  CHECK(MappingSet::load_file(std::string(TCSIM_DATA_DIR) + "/mapping_tables.txt") == MappingSet::builtin());
}

TEST_CASE("load access examples") {
  const auto& maps = MappingSet::builtin();
  const auto row = load_accesses(maps.at(key(Arch::Volta, Operand::A, kM16N16K16, Layout::RowMajor, ElemType::F16)),
                                 Layout::RowMajor, 0, 16);
  REQUIRE(row[0].size() == 2);
  CHECK(row[0][0] == MemAccess{0, 0, 128, 0, 8});
  CHECK(row[0][1] == MemAccess{0, 16, 128, 8, 8});

  const auto col = load_accesses(maps.at(key(Arch::Volta, Operand::A, kM16N16K16, Layout::ColMajor, ElemType::F16)),
                                 Layout::ColMajor, 0, 16);
  REQUIRE(col[0].size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(col[0][i].width_bits == 64);
    if (i) CHECK(col[0][i].byte_addr - col[0][i - 1].byte_addr == 128);
  }

  const auto c32 = load_accesses(maps.at(key(Arch::Volta, Operand::C, kM16N16K16, Layout::RowMajor, ElemType::F32)),
                                 Layout::RowMajor, 0, 16);
  for (const auto& lane : c32) {
    REQUIRE(lane.size() == 8);
    for (const MemAccess& a : lane) CHECK(a.width_bits == 32);
  }

  // width * count equals the fragment bytes for every supported map
  for (const auto& [k, m] : maps.maps()) {
    const int ld = k.layout == Layout::RowMajor ? m.cols() : m.rows();
    const auto acc = load_accesses(m, k.layout, 0, ld);
    for (int lane = 0; lane < 32; ++lane) {
      int bits = 0, elems = 0;
      for (const MemAccess& a : acc[lane]) {
        bits += a.width_bits;
        CHECK(a.first_elem == elems);
        elems += a.elem_count;
        CHECK(a.byte_addr % (a.width_bits / 8) == 0);
      }
      CHECK(bits == static_cast<int>(m.lane(lane).size()) * m.elem_bits());
    }
  }

  CHECK_THROWS_AS(load_accesses(maps.at(key(Arch::Volta, Operand::A, kM16N16K16, Layout::RowMajor, ElemType::F16)),
                                Layout::RowMajor, 0, 8),
                  ContractViolation);
}
