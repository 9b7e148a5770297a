#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "instantft/data.hpp"
#include "instantft/experiment.hpp"
#include "test_util.hpp"

using namespace instantft;
using instantft::testing::random_tensor;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / ("instantft_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// Pixels on the 1/255 grid so a save/load round trip is exact.
Dataset grid_dataset(Index n, Index c, Index side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds{"grid", Tensor<float>({n, c, side, side}), {}};
  for (Index i = 0; i < ds.images.size(); ++i) ds.images[i] = static_cast<float>(rng() % 256) / 255.0f;
  for (Index i = 0; i < n; ++i) ds.labels.push_back(static_cast<std::uint8_t>(rng() % 10));
  return ds;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

IdxErrorKind kind_of(const std::filesystem::path& im, const std::filesystem::path& lb) {
  try {
    load_idx(im, lb);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected IdxError";
  return IdxErrorKind::kIo;
}

}  // namespace

TEST(Idx, HandWrittenFixture) {
  TempDir dir("idx_fixture");
  // Two 2x2 images, labels 3 and 7.
  write_bytes(dir.path / "im", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 51, 102, 255, 0, 0, 0});
  write_bytes(dir.path / "lb", {0, 0, 8, 1, 0, 0, 0, 2, 3, 7});
  const Dataset ds = load_idx(dir.path / "im", dir.path / "lb");
  ASSERT_EQ(ds.size(), 2);
  EXPECT_EQ(ds.sample_shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(ds.label(0), 3);
  EXPECT_EQ(ds.label(1), 7);
  EXPECT_FLOAT_EQ(ds.images[1], 1.0f);
  EXPECT_FLOAT_EQ(ds.images[2], 0.2f);
  EXPECT_FLOAT_EQ(ds.images[4], 1.0f);
}

TEST(Idx, RoundTrip) {
  TempDir dir("idx_roundtrip");
  for (Index c : {1, 3}) {
    const Dataset ds = grid_dataset(5, c, 6, static_cast<std::uint64_t>(c));
    save_idx(ds, dir.path / "im", dir.path / "lb");
    const Dataset back = load_idx(dir.path / "im", dir.path / "lb");
    EXPECT_EQ(back.images, ds.images);
    EXPECT_EQ(back.labels, ds.labels);
  }
}

TEST(Idx, ErrorKinds) {
  TempDir dir("idx_errors");
  const auto im = dir.path / "im", lb = dir.path / "lb";
  const std::vector<unsigned char> good_im = {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9};
  const std::vector<unsigned char> good_lb = {0, 0, 8, 1, 0, 0, 0, 1, 4};
  EXPECT_EQ(kind_of(dir.path / "missing", lb), IdxErrorKind::kIo);

  write_bytes(im, {0, 0, 8, 5, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  write_bytes(lb, good_lb);
  EXPECT_EQ(kind_of(im, lb), IdxErrorKind::kBadMagic);

  write_bytes(im, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  EXPECT_EQ(kind_of(im, lb), IdxErrorKind::kTruncated);

  write_bytes(im, {0, 0, 8});
  EXPECT_EQ(kind_of(im, lb), IdxErrorKind::kTruncated);

  write_bytes(im, good_im);
  write_bytes(lb, {0, 0, 8, 1, 0, 0, 0, 2, 4, 5});
  EXPECT_EQ(kind_of(im, lb), IdxErrorKind::kCountMismatch);

  write_bytes(lb, {0, 0, 8, 1, 0, 0, 0, 1, 12});
  EXPECT_EQ(kind_of(im, lb), IdxErrorKind::kBadLabel);

  write_bytes(lb, good_lb);
  EXPECT_NO_THROW(load_idx(im, lb));
  // IdxError is a DataError.
  write_bytes(lb, {1, 2});
  EXPECT_THROW(load_idx(im, lb), DataError);
}

TEST(Rotation, ZeroIsIdentity) {
  std::mt19937_64 rng(1);
  const auto img = random_tensor<float>({3, 9, 9}, rng, 0, 1);
  EXPECT_EQ(rotate_image(img, 0.0), img);
  EXPECT_EQ(rotate_image(img, 360.0), img);
}

TEST(Rotation, QuarterTurnIsExactPermutation) {
  std::mt19937_64 rng(2);
  const Index h = 7;
  const auto img = random_tensor<float>({2, h, h}, rng, 0, 1);
  const auto r = rotate_image(img, 90.0);
  for (Index c = 0; c < 2; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < h; ++x) EXPECT_EQ(r[(c * h + y) * h + x], img[(c * h + x) * h + (h - 1 - y)]);
  EXPECT_EQ(rotate_image(rotate_image(r, 90.0), 180.0), img);
}

TEST(Rotation, BilinearMidAngleKeepsMassNearCentre) {
  // A centred blob survives any rotation with little change.
  Tensor<float> img({1, 11, 11});
  for (Index y = 4; y <= 6; ++y)
    for (Index x = 4; x <= 6; ++x) img[y * 11 + x] = 1.0f;
  for (double deg : {15.0, 30.0, 45.0, 60.0, 75.0}) {
    const auto r = rotate_image(img, deg);
    EXPECT_NEAR(r.vec().sum(), img.vec().sum(), 1.5) << deg;
    EXPECT_EQ(r[5 * 11 + 5], 1.0f);
    EXPECT_GE(r.vec().minCoeff(), 0.0f);
    EXPECT_LE(r.vec().maxCoeff(), 1.0f);
  }
  EXPECT_THROW(rotate_image(Tensor<float>({1, 3, 4}), 15.0), ShapeError);
}

TEST(Sampling, PermutationIsSeededAndComplete) {
  const auto a = permutation(100, 7);
  EXPECT_EQ(a, permutation(100, 7));
  EXPECT_NE(a, permutation(100, 8));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < 100; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(Sampling, EpochOrderAndBatches) {
  EXPECT_EQ(epoch_order(50, 3, 2), epoch_order(50, 3, 2));
  EXPECT_NE(epoch_order(50, 3, 0), epoch_order(50, 3, 1));
  const auto b = batch_indices(45, 20, 3, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 20u);
  EXPECT_EQ(b[2].size(), 5u);
  std::vector<Index> flat;
  for (const auto& x : b) flat.insert(flat.end(), x.begin(), x.end());
  EXPECT_EQ(flat, epoch_order(45, 3, 0));
  EXPECT_THROW(batch_indices(10, 0, 1, 0), ConfigError);

  const Dataset ds = grid_dataset(9, 1, 4, 5);
  const auto full = batches(ds, 4, 1, 0);
  ASSERT_EQ(full.size(), 3u);
  EXPECT_EQ(full[0].inputs[1], ds.sample(full[0].indices[1]));
  EXPECT_EQ(full[2].labels[0], ds.label(full[2].indices[0]));
}

TEST(Sampling, RotatedSplitsAreDisjointAndSeeded) {
  const Dataset src = grid_dataset(60, 1, 8, 6);
  // Tag each sample's first pixel with its index so provenance can be checked.
  Dataset tagged = src;
  for (Index i = 0; i < 60; ++i) tagged.images[i * 64] = static_cast<float>(i) / 255.0f;
  const auto a = make_rotated_splits(tagged, 0.0, 20, 30, 4);
  const auto b = make_rotated_splits(tagged, 0.0, 20, 30, 4);
  const auto c = make_rotated_splits(tagged, 0.0, 20, 30, 5);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_NE(a.train.images, c.train.images);
  std::set<int> train_ids, eval_ids;
  for (Index i = 0; i < 20; ++i) train_ids.insert(static_cast<int>(std::lround(a.train.images[i * 64] * 255)));
  for (Index i = 0; i < 30; ++i) eval_ids.insert(static_cast<int>(std::lround(a.eval.images[i * 64] * 255)));
  EXPECT_EQ(train_ids.size(), 20u);
  EXPECT_EQ(eval_ids.size(), 30u);
  for (int id : train_ids) EXPECT_EQ(eval_ids.count(id), 0u);
  EXPECT_THROW(make_rotated_splits(tagged, 0.0, 40, 30, 1), ConfigError);

  const auto rot = make_rotated_splits(tagged, 90.0, 20, 30, 4);
  EXPECT_EQ(rot.train.labels, a.train.labels);
  EXPECT_EQ(rot.train.sample(3), rotate_image(a.train.sample(3), 90.0));
}

TEST(Sampling, RotateDatasetValidatesAngle) {
  const Dataset ds = grid_dataset(10, 1, 6, 7);
  EXPECT_THROW(rotate_dataset(ds, RotationSpec{20.0, 5, 1}), ConfigError);
  EXPECT_THROW(rotate_dataset(ds, RotationSpec{15.0, 11, 1}), ConfigError);
  EXPECT_EQ(rotate_dataset(ds, RotationSpec{15.0, 5, 1}).size(), 5);
}
