// Reference GEMM. Shares nothing with the engine beyond the Matrix container:
// binary16 conversions are redone here on top of <cmath>, and the loop nest
// walks plain matrices instead of fragments.

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

#include "tcsim/error.hpp"
#include "tcsim/harness.hpp"

namespace tcsim {

namespace {

float ref_half_to_float(std::uint16_t h) {
  const int sign = h >> 15;
  const int exp = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  double v;
  if (exp == 0x1f) {
    if (mant == 0) return sign ? -std::numeric_limits<float>::infinity()
                               : std::numeric_limits<float>::infinity();
    // keep the payload so NaNs survive a round trip
    return std::bit_cast<float>((static_cast<std::uint32_t>(sign) << 31) | 0x7f800000u |
                                (static_cast<std::uint32_t>(mant) << 13));
  }
  if (exp == 0) v = std::ldexp(static_cast<double>(mant), -24);
  else v = std::ldexp(static_cast<double>(mant + 1024), exp - 25);
  return static_cast<float>(sign ? -v : v);
}

std::uint16_t ref_float_to_half(float f) {
  const std::uint32_t fb = std::bit_cast<std::uint32_t>(f);
  const std::uint16_t sign = static_cast<std::uint16_t>((fb >> 16) & 0x8000u);
  if (std::isnan(f)) return static_cast<std::uint16_t>(sign | 0x7e00u | ((fb >> 13) & 0x3ffu));
  double a = std::fabs(static_cast<double>(f));
  if (std::isinf(a)) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (a == 0.0) return sign;
  if (a < std::ldexp(1.0, -14)) {
    // subnormal grid of 2^-24; a result of 1024 is the smallest normal
    const double q = std::nearbyint(a * std::ldexp(1.0, 24));
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(q));
  }
  int e;
  std::frexp(a, &e);
  int exp = e - 1;
  double q = std::nearbyint(std::ldexp(a, 10 - exp));
  if (q == 2048.0) {
    q = 1024.0;
    ++exp;
  }
  if (exp > 15) return static_cast<std::uint16_t>(sign | 0x7c00u);
  return static_cast<std::uint16_t>(sign | ((exp + 15) << 10) | (static_cast<int>(q) - 1024));
}

std::int64_t ref_int(std::uint32_t raw, ElemType t) {
  switch (t) {
    case ElemType::S8: return static_cast<std::int8_t>(raw & 0xff);
    case ElemType::U8: return raw & 0xff;
    case ElemType::S4: return (raw & 0x8) ? static_cast<std::int64_t>(raw & 0xf) - 16 : raw & 0xf;
    case ElemType::U4: return raw & 0xf;
    default: return static_cast<std::int32_t>(raw);
  }
}

float clamp_inf(float f) {
  if (std::isinf(f)) return std::copysign(std::numeric_limits<float>::max(), f);
  return f;
}

}  // namespace

Matrix oracle_gemm(const Matrix& a, const Matrix& b, const Matrix& c, const MmaConfig& cfg) {
  const int M = a.rows, K = a.cols, N = b.cols;
  if (b.rows != K || c.rows != M || c.cols != N)
    throw ContractViolation("oracle_gemm: operand shapes disagree");
  const int tk = cfg.shape.k;
  if (K % tk != 0) throw ContractViolation("oracle_gemm: K must be a multiple of the tile K");
  // K tiles after the first accumulate into D, so their C type is dtype
  MmaConfig later = cfg;
  later.ctype = cfg.dtype;
  const PrecisionMode first_mode = cfg.mode(), later_mode = later.mode();
  Matrix d(cfg.dtype, M, N);

  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      std::uint32_t cur = c.at(i, j);  // C of the current K tile, as raw bits
      ElemType cur_type = cfg.ctype;
      for (int k0 = 0; k0 < K; k0 += tk) {
        const PrecisionMode mode = k0 == 0 ? first_mode : later_mode;
        if (mode == PrecisionMode::Int8 || mode == PrecisionMode::Int4) {
          std::int64_t s = static_cast<std::int32_t>(cur);
          for (int k = k0; k < k0 + tk; ++k)
            s += ref_int(a.at(i, k), cfg.ab_type) * ref_int(b.at(k, j), cfg.ab_type);
          if (cfg.satfinite) {
            if (s > std::numeric_limits<std::int32_t>::max()) s = std::numeric_limits<std::int32_t>::max();
            if (s < std::numeric_limits<std::int32_t>::min()) s = std::numeric_limits<std::int32_t>::min();
          }
          cur = static_cast<std::uint32_t>(s);
        } else if (mode == PrecisionMode::FP16) {
          std::uint16_t acc = static_cast<std::uint16_t>(cur);
          for (int k = k0; k < k0 + tk; k += 4) {
            float s = ref_half_to_float(acc);
            for (int q = 0; q < 4; ++q) {
              const float p = ref_half_to_float(static_cast<std::uint16_t>(a.at(i, k + q))) *
                              ref_half_to_float(static_cast<std::uint16_t>(b.at(k + q, j)));
              s = s + p;
              if (cfg.rounding == FedpRounding::PerStage) s = ref_half_to_float(ref_float_to_half(s));
            }
            acc = ref_float_to_half(s);
          }
          if (cfg.satfinite && (acc & 0x7fff) == 0x7c00) acc = static_cast<std::uint16_t>((acc & 0x8000) | 0x7bff);
          cur = acc;
        } else {
          float s = cur_type == ElemType::F16 ? ref_half_to_float(static_cast<std::uint16_t>(cur))
                                              : std::bit_cast<float>(cur);
          for (int k = k0; k < k0 + tk; ++k) {
            const float p = ref_half_to_float(static_cast<std::uint16_t>(a.at(i, k))) *
                            ref_half_to_float(static_cast<std::uint16_t>(b.at(k, j)));
            s = s + p;
          }
          if (cfg.dtype == ElemType::F32) {
            cur = std::bit_cast<std::uint32_t>(cfg.satfinite ? clamp_inf(s) : s);
          } else {
            std::uint16_t h = ref_float_to_half(s);
            if (cfg.satfinite && (h & 0x7fff) == 0x7c00) h = static_cast<std::uint16_t>((h & 0x8000) | 0x7bff);
            cur = h;
          }
        }
        cur_type = cfg.dtype;
      }
      d.at(i, j) = cur;
    }
  return d;
}

}  // namespace tcsim
