#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "instantft/errors.hpp"
#include "instantft/tensor.hpp"

namespace instantft {

// Images in [0, 1] stored as [N, c, h, w]; sample i is addressed by its
// stable index i, which is also its forward-cache key.
struct Dataset {
  std::string name;
  Tensor<float> images;
  std::vector<std::uint8_t> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  Index sample_size() const { return images.dim(1) * images.dim(2) * images.dim(3); }
  std::span<const float> pixels(Index i) const {
    return images.span().subspan(static_cast<std::size_t>(i * sample_size()), static_cast<std::size_t>(sample_size()));
  }
  Tensor<float> sample(Index i) const;
  int label(Index i) const { return labels.at(static_cast<std::size_t>(i)); }
};

enum class IdxErrorKind { kIo, kBadMagic, kTruncated, kCountMismatch, kBadLabel };

class IdxError : public DataError {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : DataError(what), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

// IDX unsigned-byte files: images 0x00000803 [N, h, w] (or 0x00000804
// [N, c, h, w] for multi-channel sets), labels 0x00000801 [N]. Dimensions are
// big-endian u32. Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Writes pixels as round(255 * v).
void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Seeded permutation of 0..n-1 (Fisher-Yates).
std::vector<Index> permutation(Index n, std::uint64_t seed);

Dataset subset(const Dataset& ds, std::span<const Index> indices, std::string name);

// Rotates every channel by `degrees` (counter-clockwise on screen) about
// ((h-1)/2, (w-1)/2) with bilinear sampling and zero fill; clamps to [0, 1].
Tensor<float> rotate_image(const Tensor<float>& image, double degrees);

inline constexpr double kRotationAngles[] = {0, 15, 30, 45, 60, 75, 90};

struct RotationSpec {
  double degrees = 0.0;
  Index sample_count = 1024;
  std::uint64_t seed = 0;
};

// Picks `sample_count` samples without replacement and rotates them.
Dataset rotate_dataset(const Dataset& ds, const RotationSpec& spec);
// Rotates the given samples, in the given order.
Dataset rotate_dataset(const Dataset& ds, double degrees, std::span<const Index> indices);

struct Batch {
  std::vector<Index> indices;  // dataset indices (cache keys)
  std::vector<int> labels;
  std::vector<Tensor<float>> inputs;
};

// Per-epoch shuffled order of 0..n-1, a function of (seed, epoch) only.
std::vector<Index> epoch_order(Index n, std::uint64_t seed, int epoch);

// Index-only batching; the final batch may be short.
std::vector<std::vector<Index>> batch_indices(Index n, Index batch, std::uint64_t seed, int epoch);

std::vector<Batch> batches(const Dataset& ds, Index batch, std::uint64_t seed, int epoch);

}  // namespace instantft
