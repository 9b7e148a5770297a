#include "instantft/lut_softmax.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "instantft/binary_io.hpp"

namespace instantft {

namespace {
constexpr char kMagic[] = "IFTLUT01";
constexpr std::int64_t kOne = std::int64_t{1} << Q8_16::kFracBits;
}  // namespace

double SoftmaxLut::exp_point(int k) { return kExpMin + (-kExpMin) * k / (kExpEntries - 1); }

double SoftmaxLut::recip_point(int j) { return 1.0 + (j + 0.5) / kRecipEntries; }

SoftmaxLut::SoftmaxLut() {
  exp_.reserve(kExpEntries);
  for (int k = 0; k < kExpEntries; ++k) exp_.push_back(fx_convert<Q8_16>(std::exp(exp_point(k))));
  recip_.reserve(kRecipEntries);
  for (int j = 0; j < kRecipEntries; ++j) recip_.push_back(fx_convert<Q8_16>(1.0 / recip_point(j)));
}

int SoftmaxLut::exp_index(FixA z) const {
  const std::int64_t lo = static_cast<std::int64_t>(kExpMin) * kOne;
  if (z.raw() <= lo) return 0;
  if (z.raw() >= 0) return kExpEntries - 1;
  const __int128 k = rne_div(__int128{z.raw() - lo} * (kExpEntries - 1), -lo);
  return static_cast<int>(std::clamp<__int128>(k, 0, kExpEntries - 1));
}

FixA SoftmaxLut::exp_lookup(FixA z) const { return exp_[static_cast<std::size_t>(exp_index(z))]; }

namespace {
// Position of the leading one and table index of the mantissa in [1, 2).
std::pair<int, int> reduce(std::int64_t s_raw, int entries) {
  const int b = std::bit_width(static_cast<std::uint64_t>(s_raw)) - 1;
  const std::int64_t j = (static_cast<__int128>(s_raw - (std::int64_t{1} << b)) * entries) >> b;
  return {b, static_cast<int>(j)};
}
}  // namespace

FixA SoftmaxLut::reciprocal(FixA s) const {
  if (s.raw() <= 0) throw NumericError("SoftmaxLut::reciprocal: non-positive argument");
  const auto [b, j] = reduce(s.raw(), kRecipEntries);
  // 1/s = recip[j] * 2^-(b - 16)
  return FixA::saturate(rne_shift(recip_[static_cast<std::size_t>(j)].raw(), b - Q8_16::kFracBits));
}

std::vector<FixA> SoftmaxLut::softmax(std::span<const FixA> logits, SaturationCounter* sat) const {
  if (logits.empty()) throw ShapeError("SoftmaxLut::softmax: empty input");
  const FixA top = *std::max_element(logits.begin(), logits.end());
  std::vector<FixA> e(logits.size());
  std::int64_t sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    e[k] = exp_lookup(fx_sub(logits[k], top, sat));
    sum += e[k].raw();
  }
  // sum >= e^0 since the maximum maps to the last exp entry.
  const auto [b, j] = reduce(sum, kRecipEntries);
  const std::int64_t r = recip_[static_cast<std::size_t>(j)].raw();
  std::vector<FixA> p(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = FixA::saturate(rne_shift(__int128{e[k].raw()} * r, b), sat);
  }
  return p;
}

void SoftmaxLut::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  io::write_bytes(os, kMagic, 8);
  io::write_pod(os, static_cast<std::uint32_t>(exp_.size()));
  io::write_pod(os, static_cast<std::uint32_t>(recip_.size()));
  for (FixA v : exp_) io::write_pod(os, static_cast<std::int32_t>(v.raw()));
  for (FixA v : recip_) io::write_pod(os, static_cast<std::int32_t>(v.raw()));
  if (!os) throw DataError("write failed: " + path.string());
}

SoftmaxLut SoftmaxLut::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  io::expect_magic(is, kMagic, 8);
  const auto ne = io::read_pod<std::uint32_t>(is);
  const auto nr = io::read_pod<std::uint32_t>(is);
  if (ne != kExpEntries || nr != kRecipEntries) throw DataError("LUT dump has unexpected table sizes");
  SoftmaxLut lut;
  for (auto& v : lut.exp_) v = FixA::from_raw(io::read_pod<std::int32_t>(is));
  for (auto& v : lut.recip_) v = FixA::from_raw(io::read_pod<std::int32_t>(is));
  return lut;
}

}  // namespace instantft
