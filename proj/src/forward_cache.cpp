#include "instantft/forward_cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "instantft/binary_io.hpp"
#include "instantft/errors.hpp"
#include "instantft/nf4.hpp"

namespace instantft {

namespace {

constexpr char kMagic[] = "IFTCACHE";
constexpr std::uint32_t kVersion = 1;

std::size_t stride_for(CacheMode mode, Index payload) {
  switch (mode) {
    case CacheMode::kFp32:
      return static_cast<std::size_t>(payload) * sizeof(float);
    case CacheMode::kNf4:
      return nf4_block_count(static_cast<std::size_t>(payload)) * kNf4BlockBytes;
    case CacheMode::kOff:
      break;
  }
  throw ConfigError("forward cache cannot be created in mode 'off'");
}

}  // namespace

std::string_view to_string(CacheMode mode) {
  switch (mode) {
    case CacheMode::kOff:
      return "off";
    case CacheMode::kFp32:
      return "fp32";
    case CacheMode::kNf4:
      return "nf4";
  }
  return "?";
}

CacheMode parse_cache_mode(std::string_view s) {
  if (s == "off") return CacheMode::kOff;
  if (s == "fp32") return CacheMode::kFp32;
  if (s == "nf4") return CacheMode::kNf4;
  throw ConfigError("unknown cache mode '" + std::string(s) + "' (expected off|fp32|nf4)");
}

ForwardCache::ForwardCache(CacheMode mode, Index capacity, Index payload_size)
    : mode_(mode), capacity_(capacity), payload_size_(payload_size), stride_(stride_for(mode, payload_size)) {
  if (capacity < 0 || payload_size <= 0) throw ShapeError("forward cache: invalid capacity or payload size");
  storage_.resize(static_cast<std::size_t>(capacity) * stride_);
  present_ = std::make_unique<std::atomic<bool>[]>(static_cast<std::size_t>(capacity));
  for (Index i = 0; i < capacity; ++i) present_[static_cast<std::size_t>(i)].store(false, std::memory_order_relaxed);
}

ForwardCache::ForwardCache(ForwardCache&& o) noexcept
    : mode_(o.mode_),
      capacity_(o.capacity_),
      payload_size_(o.payload_size_),
      stride_(o.stride_),
      storage_(std::move(o.storage_)),
      present_(std::move(o.present_)),
      entries_(o.entries_.load()),
      hits_(o.hits_.load()),
      misses_(o.misses_.load()) {}

ForwardCache& ForwardCache::operator=(ForwardCache&& o) noexcept {
  mode_ = o.mode_;
  capacity_ = o.capacity_;
  payload_size_ = o.payload_size_;
  stride_ = o.stride_;
  storage_ = std::move(o.storage_);
  present_ = std::move(o.present_);
  entries_ = o.entries_.load();
  hits_ = o.hits_.load();
  misses_ = o.misses_.load();
  return *this;
}

ForwardCache::~ForwardCache() = default;

void ForwardCache::check_index(Index index) const {
  if (index < 0 || index >= capacity_) {
    throw ShapeError("forward cache index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(capacity_) + ")");
  }
}

bool ForwardCache::contains(Index index) const {
  check_index(index);
  return present_[static_cast<std::size_t>(index)].load(std::memory_order_acquire);
}

bool ForwardCache::get(Index index, std::span<float> out) {
  check_index(index);
  if (static_cast<Index>(out.size()) != payload_size_) throw ShapeError("forward cache get: payload size mismatch");
  if (!present_[static_cast<std::size_t>(index)].load(std::memory_order_acquire)) {
    misses_.fetch_add(1, std::memory_order_relaxed);
    return false;
  }
  hits_.fetch_add(1, std::memory_order_relaxed);
  const std::byte* slot = storage_.data() + static_cast<std::size_t>(index) * stride_;
  if (mode_ == CacheMode::kFp32) {
    std::memcpy(out.data(), slot, stride_);
    return true;
  }
  const std::size_t nblocks = nf4_block_count(out.size());
  for (std::size_t b = 0; b < nblocks; ++b) {
    Nf4Block block;
    std::memcpy(block.codes.data(), slot + b * kNf4BlockBytes, block.codes.size());
    std::memcpy(&block.scale, slot + b * kNf4BlockBytes + block.codes.size(), sizeof(float));
    const std::size_t begin = b * kNf4BlockSize;
    nf4_dequantize_block(block, out.subspan(begin, std::min<std::size_t>(kNf4BlockSize, out.size() - begin)));
  }
  return true;
}

void ForwardCache::put(Index index, std::span<const float> payload) {
  check_index(index);
  if (static_cast<Index>(payload.size()) != payload_size_) throw ShapeError("forward cache put: payload size mismatch");
  if (present_[static_cast<std::size_t>(index)].load(std::memory_order_acquire)) return;
  std::byte* slot = storage_.data() + static_cast<std::size_t>(index) * stride_;
  if (mode_ == CacheMode::kFp32) {
    for (float v : payload) {
      if (!std::isfinite(v)) throw NumericError("forward cache put: non-finite payload");
    }
    std::memcpy(slot, payload.data(), stride_);
  } else {
    const std::size_t nblocks = nf4_block_count(payload.size());
    for (std::size_t b = 0; b < nblocks; ++b) {
      const std::size_t begin = b * kNf4BlockSize;
      const Nf4Block block =
          nf4_quantize_block(payload.subspan(begin, std::min<std::size_t>(kNf4BlockSize, payload.size() - begin)));
      std::memcpy(slot + b * kNf4BlockBytes, block.codes.data(), block.codes.size());
      std::memcpy(slot + b * kNf4BlockBytes + block.codes.size(), &block.scale, sizeof(float));
    }
  }
  present_[static_cast<std::size_t>(index)].store(true, std::memory_order_release);
  entries_.fetch_add(1, std::memory_order_relaxed);
}

CacheReport ForwardCache::report() const {
  CacheReport r;
  r.entries = entries_.load();
  r.bytes = static_cast<std::size_t>(r.entries) * stride_;
  r.hits = hits_.load();
  r.misses = misses_.load();
  r.compression_ratio = static_cast<double>(payload_size_ * sizeof(float)) / static_cast<double>(stride_);
  return r;
}

void ForwardCache::reset_counters() {
  hits_ = 0;
  misses_ = 0;
}

void ForwardCache::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write cache spill file " + path.string());
  io::write_bytes(os, kMagic, 8);
  io::write_pod(os, kVersion);
  io::write_pod(os, static_cast<std::uint32_t>(mode_));
  io::write_pod(os, static_cast<std::uint64_t>(payload_size_));
  io::write_pod(os, static_cast<std::uint64_t>(stride_));
  io::write_pod(os, static_cast<std::uint64_t>(capacity_));
  for (Index i = 0; i < capacity_; ++i) {
    io::write_pod(os, static_cast<std::uint8_t>(present_[static_cast<std::size_t>(i)].load() ? 1 : 0));
  }
  io::write_bytes(os, storage_.data(), storage_.size());
  if (!os) throw DataError("failed writing cache spill file " + path.string());
}

ForwardCache ForwardCache::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open cache spill file " + path.string());
  io::expect_magic(is, kMagic, 8);
  if (io::read_pod<std::uint32_t>(is) != kVersion) throw DataError("unsupported cache spill version");
  const auto mode = static_cast<CacheMode>(io::read_pod<std::uint32_t>(is));
  if (mode != CacheMode::kFp32 && mode != CacheMode::kNf4) throw DataError("bad cache mode in spill file");
  const auto payload = static_cast<Index>(io::read_pod<std::uint64_t>(is));
  const auto stride = io::read_pod<std::uint64_t>(is);
  const auto count = static_cast<Index>(io::read_pod<std::uint64_t>(is));
  ForwardCache cache(mode, count, payload);
  if (stride != cache.stride_) throw DataError("cache spill stride does not match its mode and payload size");
  Index entries = 0;
  for (Index i = 0; i < count; ++i) {
    const bool present = io::read_pod<std::uint8_t>(is) != 0;
    cache.present_[static_cast<std::size_t>(i)].store(present);
    entries += present ? 1 : 0;
  }
  io::read_bytes(is, cache.storage_.data(), cache.storage_.size());
  cache.entries_ = entries;
  return cache;
}

}  // namespace instantft
