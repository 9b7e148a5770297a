#pragma once

// Two's-complement fixed-point values with round-to-nearest-even and
// saturation. Products are formed at double width and rounded once.
//
//   Q8.16 in int32 (activations): range [-128, 128), lsb 2^-16
//   Q4.12 in int16 (parameters, gradients): range [-8, 8), lsb 2^-12

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <span>

#include "instantft/errors.hpp"

namespace instantft {

template <int IntBits, int FracBits, typename Storage>
struct QFormat {
  using storage = Storage;
  static constexpr int kIntBits = IntBits;
  static constexpr int kFracBits = FracBits;
  static constexpr int kTotalBits = IntBits + FracBits;
  static_assert(kTotalBits <= 8 * static_cast<int>(sizeof(Storage)), "format does not fit its storage");
  static constexpr std::int64_t kMaxRaw = (std::int64_t{1} << (kTotalBits - 1)) - 1;
  static constexpr std::int64_t kMinRaw = -(std::int64_t{1} << (kTotalBits - 1));
};

using Q8_16 = QFormat<8, 16, std::int32_t>;
using Q4_12 = QFormat<4, 12, std::int16_t>;

struct SaturationCounter {
  std::int64_t events = 0;
};

template <typename Fmt>
class Fixed {
 public:
  using Format = Fmt;
  using storage = typename Fmt::storage;

  constexpr Fixed() = default;

  static constexpr Fixed from_raw(std::int64_t raw) {
    if (raw > Fmt::kMaxRaw || raw < Fmt::kMinRaw) throw NumericError("Fixed::from_raw: value out of range");
    Fixed f;
    f.raw_ = static_cast<storage>(raw);
    return f;
  }

  // Clamps to the representable range, counting each clamp.
  static constexpr Fixed saturate(__int128 raw, SaturationCounter* sat = nullptr) {
    if (raw > Fmt::kMaxRaw) {
      if (sat) ++sat->events;
      raw = Fmt::kMaxRaw;
    } else if (raw < Fmt::kMinRaw) {
      if (sat) ++sat->events;
      raw = Fmt::kMinRaw;
    }
    return from_raw(static_cast<std::int64_t>(raw));
  }

  static constexpr Fixed max() { return from_raw(Fmt::kMaxRaw); }
  static constexpr Fixed min() { return from_raw(Fmt::kMinRaw); }
  static constexpr double lsb() { return 1.0 / static_cast<double>(std::int64_t{1} << Fmt::kFracBits); }

  constexpr std::int64_t raw() const { return raw_; }
  double to_double() const { return static_cast<double>(raw_) * lsb(); }
  float to_float() const { return static_cast<float>(to_double()); }

  constexpr auto operator<=>(const Fixed&) const = default;

 private:
  storage raw_ = 0;
};

using FixA = Fixed<Q8_16>;
using FixP = Fixed<Q4_12>;

// v * 2^-shift rounded to nearest, ties to even. Negative shifts scale up.
constexpr __int128 rne_shift(__int128 v, int shift) {
  if (shift <= 0) return v * (__int128{1} << -shift);
  const __int128 q = v >> shift;  // floor
  const __int128 rem = v - (q * (__int128{1} << shift));
  const __int128 half = __int128{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1) != 0)) return q + 1;
  return q;
}

// num / den rounded to nearest, ties to even; den > 0.
constexpr __int128 rne_div(__int128 num, __int128 den) {
  __int128 q = num / den;
  __int128 r = num % den;
  if (r < 0) {
    r += den;
    q -= 1;
  }
  if (2 * r > den || (2 * r == den && (q & 1) != 0)) q += 1;
  return q;
}

template <typename Fmt>
Fixed<Fmt> fx_convert(double x, SaturationCounter* sat = nullptr) {
  if (std::isnan(x)) throw NumericError("fx_convert: NaN");
  const double scaled = std::nearbyint(std::ldexp(x, Fmt::kFracBits));  // default rounding mode is ties-to-even
  if (scaled > static_cast<double>(Fmt::kMaxRaw)) return Fixed<Fmt>::saturate(Fmt::kMaxRaw + __int128{1}, sat);
  if (scaled < static_cast<double>(Fmt::kMinRaw)) return Fixed<Fmt>::saturate(Fmt::kMinRaw - __int128{1}, sat);
  return Fixed<Fmt>::from_raw(static_cast<std::int64_t>(scaled));
}

// Re-expresses a value in another format.
template <typename Out, typename In>
Fixed<Out> fx_convert(Fixed<In> x, SaturationCounter* sat = nullptr) {
  return Fixed<Out>::saturate(rne_shift(x.raw(), In::kFracBits - Out::kFracBits), sat);
}

template <typename Fmt>
Fixed<Fmt> fx_add(Fixed<Fmt> a, Fixed<Fmt> b, SaturationCounter* sat = nullptr) {
  return Fixed<Fmt>::saturate(__int128{a.raw()} + b.raw(), sat);
}

template <typename Fmt>
Fixed<Fmt> fx_sub(Fixed<Fmt> a, Fixed<Fmt> b, SaturationCounter* sat = nullptr) {
  return Fixed<Fmt>::saturate(__int128{a.raw()} - b.raw(), sat);
}

template <typename Out, typename A, typename B>
Fixed<Out> fx_mul(Fixed<A> a, Fixed<B> b, SaturationCounter* sat = nullptr) {
  const __int128 prod = __int128{a.raw()} * b.raw();
  return Fixed<Out>::saturate(rne_shift(prod, A::kFracBits + B::kFracBits - Out::kFracBits), sat);
}

// Dot product with a wide accumulator and a single rounding at the end.
template <typename Out, typename A, typename B>
Fixed<Out> fx_dot(std::span<const Fixed<A>> a, std::span<const Fixed<B>> b, SaturationCounter* sat = nullptr) {
  if (a.size() != b.size()) throw ShapeError("fx_dot: length mismatch");
  __int128 acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += __int128{a[i].raw()} * b[i].raw();
  return Fixed<Out>::saturate(rne_shift(acc, A::kFracBits + B::kFracBits - Out::kFracBits), sat);
}

}  // namespace instantft
