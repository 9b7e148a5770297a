#include "instantft/nf4.hpp"

#include <algorithm>
#include <cmath>

#include "instantft/errors.hpp"

namespace instantft {

namespace {

constexpr std::array<double, kNf4Levels - 1> midpoints() {
  std::array<double, kNf4Levels - 1> m{};
  for (int i = 0; i + 1 < kNf4Levels; ++i) {
    m[static_cast<std::size_t>(i)] =
        (static_cast<double>(kNf4Codebook[static_cast<std::size_t>(i)]) + kNf4Codebook[static_cast<std::size_t>(i + 1)]) / 2.0;
  }
  return m;
}

constexpr auto kMidpoints = midpoints();

}  // namespace

std::uint8_t nf4_nearest_code(double normalized) {
  // Number of midpoints strictly below the value; branch-free so the cache
  // fill does not stall on mispredictions.
  int n = 0;
  for (double m : kMidpoints) n += m < normalized ? 1 : 0;
  return static_cast<std::uint8_t>(n);
}

Nf4Block nf4_quantize_block(std::span<const float> vals) {
  if (vals.size() > static_cast<std::size_t>(kNf4BlockSize)) throw ShapeError("nf4_quantize_block: more than 64 values");
  Nf4Block block;
  float absmax = 0.0f;
  for (float v : vals) {
    if (!std::isfinite(v)) throw NumericError("nf4_quantize_block: non-finite input");
    absmax = std::max(absmax, std::fabs(v));
  }
  block.scale = absmax;
  // Padding and an all-zero block map to the zero code.
  std::array<std::uint8_t, kNf4BlockSize> code;
  code.fill(kNf4ZeroCode);
  if (absmax > 0.0f) {
    std::array<double, kNf4BlockSize> x{};
    const double a = absmax;
    for (std::size_t i = 0; i < vals.size(); ++i) x[i] = static_cast<double>(vals[i]) / a;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      int n = 0;
      for (double m : kMidpoints) n += m < x[i] ? 1 : 0;
      code[i] = static_cast<std::uint8_t>(n);
    }
  }
  for (std::size_t j = 0; j < block.codes.size(); ++j) {
    block.codes[j] = static_cast<std::uint8_t>(code[2 * j] | (code[2 * j + 1] << 4));
  }
  return block;
}

void nf4_dequantize_block(const Nf4Block& block, std::span<float> out) {
  if (out.size() > static_cast<std::size_t>(kNf4BlockSize)) throw ShapeError("nf4_dequantize_block: more than 64 values");
  std::array<float, kNf4Levels> level;
  for (int k = 0; k < kNf4Levels; ++k) level[static_cast<std::size_t>(k)] = kNf4Codebook[static_cast<std::size_t>(k)] * block.scale;
  const std::size_t pairs = out.size() / 2;
  for (std::size_t j = 0; j < pairs; ++j) {
    const std::uint8_t byte = block.codes[j];
    out[2 * j] = level[byte & 0x0F];
    out[2 * j + 1] = level[byte >> 4];
  }
  if (out.size() % 2 != 0) out[out.size() - 1] = level[block.code(static_cast<int>(out.size() - 1))];
}

void nf4_encode(std::span<const float> vals, std::span<Nf4Block> blocks) {
  if (blocks.size() != nf4_block_count(vals.size())) throw ShapeError("nf4_encode: block count mismatch");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::size_t begin = b * kNf4BlockSize;
    blocks[b] = nf4_quantize_block(vals.subspan(begin, std::min<std::size_t>(kNf4BlockSize, vals.size() - begin)));
  }
}

void nf4_decode(std::span<const Nf4Block> blocks, std::span<float> out) {
  if (blocks.size() != nf4_block_count(out.size())) throw ShapeError("nf4_decode: block count mismatch");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::size_t begin = b * kNf4BlockSize;
    nf4_dequantize_block(blocks[b], out.subspan(begin, std::min<std::size_t>(kNf4BlockSize, out.size() - begin)));
  }
}

}  // namespace instantft
