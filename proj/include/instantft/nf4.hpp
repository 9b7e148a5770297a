#pragma once

// Blockwise 4-bit NormalFloat codec: 64 values share one FP32 absmax scale,
// each value stores the index of the nearest level of a 16-entry codebook
// built from standard-normal quantiles.

#include <array>
#include <cstdint>
#include <span>

namespace instantft {

inline constexpr int kNf4BlockSize = 64;
inline constexpr int kNf4Levels = 16;
inline constexpr std::uint8_t kNf4ZeroCode = 7;

// Quantiles of N(0,1): 8 positive levels from probabilities linspace(o, 0.5, 9),
// 7 negative from linspace(o, 0.5, 8), plus an exact zero, scaled to [-1, 1];
// o = (1 - 1/30 + 1 - 1/32) / 2.
inline constexpr std::array<float, kNf4Levels> kNf4Codebook = {
    -1.0f,          -0.696192891f, -0.525073039f, -0.394917491f, -0.284441358f, -0.184773435f,
    -0.0910499921f, 0.0f,          0.0795803291f, 0.160930173f,  0.246112294f,  0.337915194f,
    0.440709802f,   0.56261697f,   0.722956728f,  1.0f,
};

struct Nf4Block {
  std::array<std::uint8_t, kNf4BlockSize / 2> codes{};  // two codes per byte, low nibble first
  float scale = 0.0f;

  std::uint8_t code(int i) const {
    const std::uint8_t byte = codes[static_cast<std::size_t>(i / 2)];
    return (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
  }
  void set_code(int i, std::uint8_t c) {
    std::uint8_t& byte = codes[static_cast<std::size_t>(i / 2)];
    byte = (i % 2 == 0) ? static_cast<std::uint8_t>((byte & 0xF0) | c)
                        : static_cast<std::uint8_t>((byte & 0x0F) | (c << 4));
  }

  bool operator==(const Nf4Block&) const = default;
};

inline constexpr std::size_t kNf4BlockBytes = kNf4BlockSize / 2 + sizeof(float);

// Nearest codebook level to a value already normalized by the block scale;
// exact midpoints go to the lower index.
std::uint8_t nf4_nearest_code(double normalized);

// Quantizes up to 64 values; a short input is zero-padded. Throws NumericError
// on NaN/Inf.
Nf4Block nf4_quantize_block(std::span<const float> vals);

// Writes out.size() (<= 64) dequantized values.
void nf4_dequantize_block(const Nf4Block& block, std::span<float> out);

inline std::size_t nf4_block_count(std::size_t n) { return (n + kNf4BlockSize - 1) / kNf4BlockSize; }

// Quantize/dequantize a payload of arbitrary length as a sequence of blocks.
void nf4_encode(std::span<const float> vals, std::span<Nf4Block> blocks);
void nf4_decode(std::span<const Nf4Block> blocks, std::span<float> out);

}  // namespace instantft
