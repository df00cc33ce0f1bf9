#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string_view>
#include <variant>

namespace tcsim {

// IEEE 754 binary16, stored as its raw bit pattern.
struct Half {
  std::uint16_t bits = 0;

  static constexpr Half from_bits(std::uint16_t b) { return Half{b}; }
  friend constexpr bool operator==(Half, Half) = default;
};

constexpr bool is_nan(Half h) {
  return (h.bits & 0x7c00u) == 0x7c00u && (h.bits & 0x03ffu) != 0;
}
constexpr bool is_inf(Half h) { return (h.bits & 0x7fffu) == 0x7c00u; }

enum class PrecisionMode { MixedFP32Acc, FP16, Int8, Int4 };

std::string_view to_string(PrecisionMode m);
constexpr bool is_integer_mode(PrecisionMode m) {
  return m == PrecisionMode::Int8 || m == PrecisionMode::Int4;
}

// Where the FP16-mode dot product narrows back to binary16.
//   Terminal: one narrowing after c + p0 + p1 + p2 + p3 is summed in binary32.
//   PerStage: narrow after every addition.
// In MixedFP32Acc mode both policies are identical.
enum class FedpRounding { Terminal, PerStage };

// Accumulator value; the active alternative is fixed by the precision mode.
using Acc = std::variant<Half, float, std::int32_t>;

Half half_from_f32(float x) noexcept;
float half_to_f32(Half h) noexcept;

// Table-driven widening, safe for hot loops.
inline float half_to_f32_fast(Half h) noexcept;

// Clamp +-inf to the largest finite magnitude; NaN and finite values pass
// through unchanged.
Half saturate_finite(Half h) noexcept;
float saturate_finite(float f) noexcept;

// c + sum(a[i] * b[i]) under the fixed contract: products exact in binary32,
// summed in binary32 in the order c, a0b0, a1b1, a2b2, a3b3. In FP16 mode the
// accumulator is Half and narrowing follows `rounding`.
Acc fedp4(std::span<const Half, 4> a, std::span<const Half, 4> b, Acc c,
          PrecisionMode mode, FedpRounding rounding = FedpRounding::Terminal);

// Hot-path forms of fedp4 used by the functional engine.
float fedp4_f32(const float* a, const float* b, float c) noexcept;
Half fedp4_f16(const float* a, const float* b, Half c,
               FedpRounding rounding) noexcept;

// Integer dot product with wrapping 32-bit accumulation. Elements must lie in
// the signed or unsigned range of the mode's width.
std::int32_t idot(std::span<const std::int32_t> a,
                  std::span<const std::int32_t> b, std::int32_t c,
                  PrecisionMode mode, bool is_signed);

// Same dot product, saturating the final result to the int32 range instead of
// wrapping (used for .satfinite integer MMAs).
std::int32_t idot_saturating(std::span<const std::int32_t> a,
                             std::span<const std::int32_t> b, std::int32_t c,
                             PrecisionMode mode, bool is_signed);

namespace detail {
extern const std::array<float, 65536> kHalfToFloat;
}

inline float half_to_f32_fast(Half h) noexcept {
  return detail::kHalfToFloat[h.bits];
}

}  // namespace tcsim
