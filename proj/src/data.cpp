#include "instantft/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace instantft {

namespace {

constexpr std::uint32_t kImagesMagic3 = 0x00000803;
constexpr std::uint32_t kImagesMagic4 = 0x00000804;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError(IdxErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& buf, std::size_t off, const std::filesystem::path& path) {
  if (off + 4 > buf.size()) throw IdxError(IdxErrorKind::kTruncated, "truncated IDX header in " + path.string());
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

void put_be32(std::ofstream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  os.write(b, 4);
}

// splitmix64 finalizer, used to derive independent stream seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void fisher_yates(std::vector<Index>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

Tensor<float> Dataset::sample(Index i) const {
  if (i < 0 || i >= size()) throw ShapeError("dataset index " + std::to_string(i) + " out of range");
  const auto px = pixels(i);
  return Tensor<float>(sample_shape(), Eigen::Map<const Vec<float>>(px.data(), static_cast<Index>(px.size())));
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const std::uint32_t magic = be32(img, 0, images_path);
  if (magic != kImagesMagic3 && magic != kImagesMagic4) {
    throw IdxError(IdxErrorKind::kBadMagic, "bad IDX image magic in " + images_path.string());
  }
  const std::uint32_t n = be32(img, 4, images_path);
  Index c = 1, h = 0, w = 0;
  std::size_t off = 0;
  if (magic == kImagesMagic3) {
    h = be32(img, 8, images_path);
    w = be32(img, 12, images_path);
    off = 16;
  } else {
    c = be32(img, 8, images_path);
    h = be32(img, 12, images_path);
    w = be32(img, 16, images_path);
    off = 20;
  }
  const std::size_t pixels = static_cast<std::size_t>(n) * static_cast<std::size_t>(c * h * w);
  if (img.size() < off + pixels) throw IdxError(IdxErrorKind::kTruncated, "truncated IDX images in " + images_path.string());

  if (be32(lab, 0, labels_path) != kLabelsMagic) {
    throw IdxError(IdxErrorKind::kBadMagic, "bad IDX label magic in " + labels_path.string());
  }
  const std::uint32_t nl = be32(lab, 4, labels_path);
  if (lab.size() < 8 + static_cast<std::size_t>(nl)) {
    throw IdxError(IdxErrorKind::kTruncated, "truncated IDX labels in " + labels_path.string());
  }
  if (nl != n) {
    throw IdxError(IdxErrorKind::kCountMismatch,
                   "image count " + std::to_string(n) + " != label count " + std::to_string(nl));
  }
  if (n == 0) throw IdxError(IdxErrorKind::kCountMismatch, "empty dataset " + images_path.string());

  Dataset ds;
  ds.name = images_path.stem().string();
  Vec<float> data(static_cast<Index>(pixels));
  for (std::size_t i = 0; i < pixels; ++i) data[static_cast<Index>(i)] = static_cast<float>(img[off + i]) / 255.0f;
  ds.images = Tensor<float>({static_cast<Index>(n), c, h, w}, std::move(data));
  ds.labels.assign(lab.begin() + 8, lab.begin() + 8 + n);
  for (auto l : ds.labels) {
    if (l >= 10) throw IdxError(IdxErrorKind::kBadLabel, "label out of range in " + labels_path.string());
  }
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  std::ofstream im(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lb(labels_path, std::ios::binary | std::ios::trunc);
  if (!im || !lb) throw IdxError(IdxErrorKind::kIo, "cannot write IDX files");
  const Shape s = ds.sample_shape();
  if (s[0] == 1) {
    put_be32(im, kImagesMagic3);
    put_be32(im, static_cast<std::uint32_t>(ds.size()));
  } else {
    put_be32(im, kImagesMagic4);
    put_be32(im, static_cast<std::uint32_t>(ds.size()));
    put_be32(im, static_cast<std::uint32_t>(s[0]));
  }
  put_be32(im, static_cast<std::uint32_t>(s[1]));
  put_be32(im, static_cast<std::uint32_t>(s[2]));
  for (Index i = 0; i < ds.images.size(); ++i) {
    const float v = std::clamp(ds.images[i], 0.0f, 1.0f);
    im.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  put_be32(lb, kLabelsMagic);
  put_be32(lb, static_cast<std::uint32_t>(ds.size()));
  lb.write(reinterpret_cast<const char*>(ds.labels.data()), static_cast<std::streamsize>(ds.labels.size()));
  if (!im || !lb) throw IdxError(IdxErrorKind::kIo, "failed writing IDX files");
}

std::vector<Index> permutation(Index n, std::uint64_t seed) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(mix(seed));
  fisher_yates(v, rng);
  return v;
}

Dataset subset(const Dataset& ds, std::span<const Index> indices, std::string name) {
  Dataset out;
  out.name = std::move(name);
  const Index stride = ds.sample_size();
  Vec<float> data(static_cast<Index>(indices.size()) * stride);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto px = ds.pixels(indices[k]);
    std::copy(px.begin(), px.end(), data.data() + static_cast<Index>(k) * stride);
    out.labels.push_back(static_cast<std::uint8_t>(ds.label(indices[k])));
  }
  const Shape s = ds.sample_shape();
  out.images = Tensor<float>({static_cast<Index>(indices.size()), s[0], s[1], s[2]}, std::move(data));
  return out;
}

Tensor<float> rotate_image(const Tensor<float>& image, double degrees) {
  if (image.rank() != 3) throw ShapeError("rotate_image: expected [c, h, w]");
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h != w) throw ShapeError("rotate_image: image must be square");

  // Exact trig at quarter turns keeps those rotations pure permutations.
  double cs = 0.0, sn = 0.0;
  const double q = degrees / 90.0;
  if (q == std::round(q)) {
    constexpr std::array<double, 4> kCos = {1, 0, -1, 0};
    constexpr std::array<double, 4> kSin = {0, 1, 0, -1};
    const auto k = static_cast<std::size_t>(((static_cast<long long>(q) % 4) + 4) % 4);
    cs = kCos[k];
    sn = kSin[k];
  } else {
    const double rad = degrees * std::numbers::pi / 180.0;
    cs = std::cos(rad);
    sn = std::sin(rad);
  }
  const double cy = static_cast<double>(h - 1) / 2.0, cx = static_cast<double>(w - 1) / 2.0;
  Tensor<float> out(image.shape());
  auto at = [&](Index ch, Index y, Index x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return image[(ch * h + y) * w + x];
  };
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sx = cx + cs * dx - sn * dy;
      const double sy = cy + sn * dx + cs * dy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const auto x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
      for (Index ch = 0; ch < c; ++ch) {
        const double v = (1 - ay) * ((1 - ax) * at(ch, y0, x0) + ax * at(ch, y0, x0 + 1)) +
                         ay * ((1 - ax) * at(ch, y0 + 1, x0) + ax * at(ch, y0 + 1, x0 + 1));
        out[(ch * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

Dataset rotate_dataset(const Dataset& ds, double degrees, std::span<const Index> indices) {
  Dataset out = subset(ds, indices, ds.name + "-rot" + std::to_string(static_cast<int>(degrees)));
  const Index stride = ds.sample_size();
  for (Index i = 0; i < out.size(); ++i) {
    const Tensor<float> r = rotate_image(out.sample(i), degrees);
    std::copy(r.data(), r.data() + stride, out.images.data() + i * stride);
  }
  return out;
}

Dataset rotate_dataset(const Dataset& ds, const RotationSpec& spec) {
  if (std::find(std::begin(kRotationAngles), std::end(kRotationAngles), spec.degrees) == std::end(kRotationAngles)) {
    throw ConfigError("rotation angle must be one of 0, 15, ..., 90 degrees");
  }
  if (spec.sample_count <= 0 || spec.sample_count > ds.size()) throw ConfigError("rotation sample count out of range");
  std::vector<Index> perm = permutation(ds.size(), spec.seed);
  perm.resize(static_cast<std::size_t>(spec.sample_count));
  return rotate_dataset(ds, spec.degrees, perm);
}

std::vector<Index> epoch_order(Index n, std::uint64_t seed, int epoch) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(mix(mix(seed) + static_cast<std::uint64_t>(epoch)));
  fisher_yates(v, rng);
  return v;
}

std::vector<std::vector<Index>> batch_indices(Index n, Index batch, std::uint64_t seed, int epoch) {
  if (batch <= 0) throw ConfigError("batch size must be positive");
  const std::vector<Index> order = epoch_order(n, seed, epoch);
  std::vector<std::vector<Index>> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<Batch> batches(const Dataset& ds, Index batch, std::uint64_t seed, int epoch) {
  std::vector<Batch> out;
  for (auto& idx : batch_indices(ds.size(), batch, seed, epoch)) {
    Batch b;
    for (Index i : idx) {
      b.labels.push_back(ds.label(i));
      b.inputs.push_back(ds.sample(i));
    }
    b.indices = std::move(idx);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace instantft
