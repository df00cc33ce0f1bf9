#include "tcsim/numerics.hpp"

#include <limits>
#include <string>

#include "tcsim/error.hpp"

namespace tcsim {

std::string_view to_string(PrecisionMode m) {
  switch (m) {
    case PrecisionMode::MixedFP32Acc: return "mixed";
    case PrecisionMode::FP16: return "fp16";
    case PrecisionMode::Int8: return "int8";
    case PrecisionMode::Int4: return "int4";
  }
  return "?";
}

namespace {

// Shift right by `s` (1..31) with round-to-nearest-even on the dropped bits.
std::uint32_t shift_rne(std::uint32_t m, unsigned s) {
  std::uint32_t q = m >> s;
  std::uint32_t rem = m & ((1u << s) - 1u);
  std::uint32_t halfway = 1u << (s - 1);
  if (rem > halfway || (rem == halfway && (q & 1u))) ++q;
  return q;
}

std::array<float, 65536> build_half_table() {
  std::array<float, 65536> t{};
  for (std::uint32_t i = 0; i < 65536; ++i)
    t[i] = half_to_f32(Half::from_bits(static_cast<std::uint16_t>(i)));
  return t;
}

}  // namespace

namespace detail {
const std::array<float, 65536> kHalfToFloat = build_half_table();
}

Half half_from_f32(float x) noexcept {
  const std::uint32_t f = std::bit_cast<std::uint32_t>(x);
  const std::uint16_t sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
  const std::uint32_t mag = f & 0x7fffffffu;

  if (mag >= 0x7f800000u) {
    if (mag == 0x7f800000u) return Half{static_cast<std::uint16_t>(sign | 0x7c00u)};
    // quiet NaN, keeping the top payload bits
    return Half{static_cast<std::uint16_t>(sign | 0x7e00u | ((mag >> 13) & 0x3ffu))};
  }
  // 65520 and above round to infinity
  if (mag >= 0x477ff000u) return Half{static_cast<std::uint16_t>(sign | 0x7c00u)};

  if (mag < 0x38800000u) {
    // result is a binary16 subnormal or zero
    const std::uint32_t exp = mag >> 23;
    if (exp < 102) return Half{sign};  // below 2^-25, rounds to zero
    const std::uint32_t mant = (mag & 0x7fffffu) | 0x800000u;
    return Half{static_cast<std::uint16_t>(sign | shift_rne(mant, 126 - exp))};
  }

  // normal: rebias exponent by -112 and round the low 13 mantissa bits
  const std::uint32_t rebased = mag - 0x38000000u;
  return Half{static_cast<std::uint16_t>(sign | shift_rne(rebased, 13))};
}

float half_to_f32(Half h) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(h.bits & 0x8000u) << 16;
  const std::uint32_t exp = (h.bits >> 10) & 0x1fu;
  std::uint32_t mant = h.bits & 0x3ffu;

  std::uint32_t out;
  if (exp == 0x1f) {
    out = sign | 0x7f800000u | (mant << 13);
  } else if (exp != 0) {
    out = sign | ((exp + 112) << 23) | (mant << 13);
  } else if (mant == 0) {
    out = sign;
  } else {
    // subnormal: normalize into binary32
    std::uint32_t e = 113;
    while ((mant & 0x400u) == 0) {
      mant <<= 1;
      --e;
    }
    out = sign | (e << 23) | ((mant & 0x3ffu) << 13);
  }
  return std::bit_cast<float>(out);
}

Half saturate_finite(Half h) noexcept {
  if (is_inf(h)) return Half{static_cast<std::uint16_t>((h.bits & 0x8000u) | 0x7bffu)};
  return h;
}

float saturate_finite(float f) noexcept {
  constexpr float kMax = std::numeric_limits<float>::max();
  if (f == std::numeric_limits<float>::infinity()) return kMax;
  if (f == -std::numeric_limits<float>::infinity()) return -kMax;
  return f;
}

float fedp4_f32(const float* a, const float* b, float c) noexcept {
  float s = c;
  s = s + a[0] * b[0];
  s = s + a[1] * b[1];
  s = s + a[2] * b[2];
  s = s + a[3] * b[3];
  return s;
}

Half fedp4_f16(const float* a, const float* b, Half c,
               FedpRounding rounding) noexcept {
  if (rounding == FedpRounding::Terminal)
    return half_from_f32(fedp4_f32(a, b, half_to_f32_fast(c)));
  float s = half_to_f32_fast(c);
  for (int i = 0; i < 4; ++i) s = half_to_f32_fast(half_from_f32(s + a[i] * b[i]));
  return half_from_f32(s);
}

Acc fedp4(std::span<const Half, 4> a, std::span<const Half, 4> b, Acc c,
          PrecisionMode mode, FedpRounding rounding) {
  std::array<float, 4> fa{}, fb{};
  for (int i = 0; i < 4; ++i) {
    fa[i] = half_to_f32(a[i]);
    fb[i] = half_to_f32(b[i]);
  }
  switch (mode) {
    case PrecisionMode::MixedFP32Acc: {
      const float* cf = std::get_if<float>(&c);
      if (!cf) throw ContractViolation("fedp4: mixed mode requires a binary32 accumulator");
      return fedp4_f32(fa.data(), fb.data(), *cf);
    }
    case PrecisionMode::FP16: {
      const Half* ch = std::get_if<Half>(&c);
      if (!ch) throw ContractViolation("fedp4: fp16 mode requires a binary16 accumulator");
      return fedp4_f16(fa.data(), fb.data(), *ch, rounding);
    }
    default:
      throw ContractViolation("fedp4: integer modes use idot");
  }
}

namespace {

void check_int_operands(std::span<const std::int32_t> a,
                        std::span<const std::int32_t> b, PrecisionMode mode,
                        bool is_signed) {
  if (!is_integer_mode(mode)) throw ContractViolation("idot: mode must be int8 or int4");
  if (a.size() != b.size()) throw ContractViolation("idot: operand length mismatch");
  const int bits = mode == PrecisionMode::Int8 ? 8 : 4;
  const std::int32_t lo = is_signed ? -(1 << (bits - 1)) : 0;
  const std::int32_t hi = is_signed ? (1 << (bits - 1)) - 1 : (1 << bits) - 1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < lo || a[i] > hi || b[i] < lo || b[i] > hi)
      throw ContractViolation("idot: element out of range for " +
                              std::string(to_string(mode)));
  }
}

}  // namespace

std::int32_t idot(std::span<const std::int32_t> a,
                  std::span<const std::int32_t> b, std::int32_t c,
                  PrecisionMode mode, bool is_signed) {
  check_int_operands(a, b, mode, is_signed);
  std::uint32_t acc = static_cast<std::uint32_t>(c);
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<std::uint32_t>(a[i]) * static_cast<std::uint32_t>(b[i]);
  return static_cast<std::int32_t>(acc);
}

std::int32_t idot_saturating(std::span<const std::int32_t> a,
                             std::span<const std::int32_t> b, std::int32_t c,
                             PrecisionMode mode, bool is_signed) {
  check_int_operands(a, b, mode, is_signed);
  std::int64_t acc = c;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += static_cast<std::int64_t>(a[i]) * b[i];
  if (acc > std::numeric_limits<std::int32_t>::max()) return std::numeric_limits<std::int32_t>::max();
  if (acc < std::numeric_limits<std::int32_t>::min()) return std::numeric_limits<std::int32_t>::min();
  return static_cast<std::int32_t>(acc);
}

}  // namespace tcsim
