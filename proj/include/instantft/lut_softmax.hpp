#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "instantft/fixed_point.hpp"

namespace instantft {

// Table-driven softmax over Q8.16 logits.
//
// exp: kExpEntries samples of e^z on [-16, 0], entry k at z = -16 + 16 k / (kExpEntries - 1);
//      lookup takes the nearest entry, z < -16 reads entry 0.
// reciprocal: kRecipEntries samples of 1/m at bin centres of [1, 2); the sum
//      is range-reduced by a power of two before lookup.
class SoftmaxLut {
 public:
  static constexpr int kExpEntries = 512;
  static constexpr int kRecipEntries = 256;
  static constexpr double kExpMin = -16.0;

  SoftmaxLut();

  // Sample point of exp entry k and reciprocal entry j.
  static double exp_point(int k);
  static double recip_point(int j);

  FixA exp_lookup(FixA z) const;
  int exp_index(FixA z) const;
  // 1 / s for s > 0, via the reciprocal table.
  FixA reciprocal(FixA s) const;

  std::vector<FixA> softmax(std::span<const FixA> logits, SaturationCounter* sat = nullptr) const;

  const std::vector<FixA>& exp_table() const { return exp_; }
  const std::vector<FixA>& recip_table() const { return recip_; }

  // Binary dump: "IFTLUT01", u32 exp count, u32 recip count, i32 raw entries.
  void save(const std::filesystem::path& path) const;
  static SoftmaxLut load(const std::filesystem::path& path);

  bool operator==(const SoftmaxLut&) const = default;

 private:
  std::vector<FixA> exp_;
  std::vector<FixA> recip_;
};

}  // namespace instantft
