#pragma once

// Brute-force references for the unit and acceptance tests. Deliberately
// slow and simple; nothing here calls into the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

namespace ref {

// Value of a binary16 pattern straight from the format definition.
inline double half_value(std::uint16_t h) {
  const int sign = h >> 15, exp = (h >> 10) & 0x1f, mant = h & 0x3ff;
  if (exp == 0x1f) return mant ? NAN : (sign ? -INFINITY : INFINITY);
  double v = exp == 0 ? mant * std::pow(2.0, -24) : (1024 + mant) * std::pow(2.0, exp - 25);
  return sign ? -v : v;
}

// Nearest binary16 by searching the sorted list of finite magnitudes; ties go
// to the even pattern; magnitudes at or past 65520 overflow to infinity.
inline std::uint16_t nearest_half(double x) {
  static const std::vector<double> mags = [] {
    std::vector<double> v;
    for (std::uint16_t h = 0; h < 0x7c00; ++h) v.push_back(half_value(h));
    return v;
  }();
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  if (std::isnan(x)) return sign | 0x7e00;
  const double a = std::fabs(x);
  if (a >= 65520.0) return sign | 0x7c00;
  const auto it = std::lower_bound(mags.begin(), mags.end(), a);
  if (it == mags.end()) return sign | 0x7bff;
  std::uint16_t hi = static_cast<std::uint16_t>(it - mags.begin());
  if (mags[hi] == a || hi == 0) return sign | hi;
  const std::uint16_t lo = hi - 1;
  const double dl = a - mags[lo], dh = mags[hi] - a;
  if (dl < dh) return sign | lo;
  if (dh < dl) return sign | hi;
  return sign | ((lo & 1) ? hi : lo);
}

// Distinct sectors touched by lanes each reading `bytes` bytes.
inline std::size_t sectors_touched(const std::vector<std::uint64_t>& addrs, int bytes,
                                   int sector) {
  std::set<std::uint64_t> s;
  for (std::uint64_t a : addrs)
    for (int b = 0; b < bytes; ++b) s.insert((a + b) / sector);
  return s.size();
}

}  // namespace ref
