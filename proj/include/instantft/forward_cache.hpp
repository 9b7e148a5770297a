#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "instantft/tensor.hpp"

namespace instantft {

enum class CacheMode : std::uint32_t { kOff = 0, kFp32 = 1, kNf4 = 2 };

std::string_view to_string(CacheMode mode);
CacheMode parse_cache_mode(std::string_view s);

struct CacheReport {
  Index entries = 0;
  std::size_t bytes = 0;       // entries * entry_stride
  std::int64_t hits = 0;
  std::int64_t misses = 0;
  double compression_ratio = 0.0;  // FP32 payload bytes / stored bytes per entry
};

// Index-keyed store of per-sample frozen activations. Each slot is written
// once; readers see a slot only after its write completes.
//
// Stored bytes per entry: FP32 = 4 * payload_size; NF4 = ceil(payload/64) * 36
// (32 bytes of packed codes + FP32 scale per block, last block zero-padded).
class ForwardCache {
 public:
  ForwardCache(CacheMode mode, Index capacity, Index payload_size);

  ForwardCache(const ForwardCache&) = delete;
  ForwardCache& operator=(const ForwardCache&) = delete;
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;
  ~ForwardCache();

  // Fills `out` (payload_size floats) and returns true on a hit.
  bool get(Index index, std::span<float> out);
  void put(Index index, std::span<const float> payload);
  bool contains(Index index) const;

  CacheMode mode() const { return mode_; }
  Index capacity() const { return capacity_; }
  Index payload_size() const { return payload_size_; }
  std::size_t entry_stride() const { return stride_; }
  CacheReport report() const;
  void reset_counters();

  // Spill file: "IFTCACHE" | u32 version | u32 mode | u64 payload_size |
  // u64 entry_stride | u64 count | count presence bytes | count * stride bytes.
  // All integers little-endian.
  void save(const std::filesystem::path& path) const;
  static ForwardCache load(const std::filesystem::path& path);

 private:
  void check_index(Index index) const;

  CacheMode mode_;
  Index capacity_;
  Index payload_size_;
  std::size_t stride_;
  std::vector<std::byte> storage_;
  std::unique_ptr<std::atomic<bool>[]> present_;
  std::atomic<Index> entries_{0};
  std::atomic<std::int64_t> hits_{0};
  std::atomic<std::int64_t> misses_{0};
};

}  // namespace instantft
