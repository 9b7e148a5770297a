#include "instantft/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "instantft/binary_io.hpp"

namespace instantft {

namespace {

constexpr char kMagic[] = "IFTCKPT1";
constexpr std::uint32_t kKindModel = 0;
constexpr std::uint32_t kKindAdapters = 1;

void write_header(std::ostream& os, std::uint32_t kind, const ModelSpec& s) {
  io::write_bytes(os, kMagic, 8);
  io::write_pod(os, kCheckpointVersion);
  io::write_pod(os, kind);
  for (Index v : {s.in_channels, s.in_height, s.in_width, s.conv1_padding}) io::write_pod(os, static_cast<std::int64_t>(v));
}

ModelSpec read_header(std::istream& is, std::uint32_t expected_kind) {
  io::expect_magic(is, kMagic, 8);
  const auto version = io::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto kind = io::read_pod<std::uint32_t>(is);
  if (kind != expected_kind) throw DataError(kind == kKindModel ? "file holds a model, not adapters" : "file holds adapters, not a model");
  ModelSpec s;
  s.in_channels = io::read_pod<std::int64_t>(is);
  s.in_height = io::read_pod<std::int64_t>(is);
  s.in_width = io::read_pod<std::int64_t>(is);
  s.conv1_padding = io::read_pod<std::int64_t>(is);
  if (s != ModelSpec::mnist() && s != ModelSpec::svhn()) throw DataError("checkpoint has an unknown model spec");
  return s;
}

void write_floats(std::ostream& os, const float* p, Index n) {
  io::write_bytes(os, p, static_cast<std::size_t>(n) * sizeof(float));
}

void read_floats(std::istream& is, float* p, Index n) { io::read_bytes(is, p, static_cast<std::size_t>(n) * sizeof(float)); }

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  io::write_pod(os, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) io::write_pod(os, static_cast<std::uint64_t>(d));
}

Shape read_shape(std::istream& is) {
  const auto rank = io::read_pod<std::uint32_t>(is);
  if (rank > 4) throw DataError("checkpoint tensor rank too large");
  Shape s;
  for (std::uint32_t i = 0; i < rank; ++i) s.push_back(static_cast<Index>(io::read_pod<std::uint64_t>(is)));
  return s;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return is;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_model(const std::filesystem::path& path, const ModelState<float>& m) {
  std::ostringstream os;
  write_header(os, kKindModel, m.spec);
  for (const auto& p : m.layers) {
    write_tensor(os, p.weight);
    write_floats(os, p.weight.data(), p.weight.size());
    write_floats(os, p.bias.data(), p.bias.size());
  }
  write_file_atomic(path, os.str());
}

ModelState<float> load_model(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  ModelState<float> m = zero_model<float>(read_header(is, kKindModel));
  for (auto& p : m.layers) {
    if (read_shape(is) != p.weight.shape()) throw DataError("checkpoint layer shape does not match the model spec");
    read_floats(is, p.weight.data(), p.weight.size());
    read_floats(is, p.bias.data(), p.bias.size());
  }
  return m;
}

void save_adapters(const std::filesystem::path& path, const ModelSpec& spec, const AdapterSet<float>& adapters) {
  std::ostringstream os;
  write_header(os, kKindAdapters, spec);
  io::write_pod(os, static_cast<std::uint64_t>(adapters.size()));
  for (const auto& a : adapters) {
    io::write_pod(os, static_cast<std::int32_t>(a.src));
    io::write_pod(os, static_cast<std::int32_t>(a.dst));
    for (Index v : {a.rank(), a.in_dim(), a.out_dim()}) io::write_pod(os, static_cast<std::uint64_t>(v));
    write_floats(os, a.A.data(), a.A.size());
    write_floats(os, a.B.data(), a.B.size());
  }
  write_file_atomic(path, os.str());
}

AdapterSet<float> load_adapters(const std::filesystem::path& path, ModelSpec* spec) {
  std::ifstream is = open_in(path);
  const ModelSpec s = read_header(is, kKindAdapters);
  if (spec) *spec = s;
  const auto count = io::read_pod<std::uint64_t>(is);
  if (count > 64) throw DataError("checkpoint adapter count is implausible");
  AdapterSet<float> set;
  for (std::uint64_t i = 0; i < count; ++i) {
    Adapter<float> a;
    a.src = io::read_pod<std::int32_t>(is);
    a.dst = io::read_pod<std::int32_t>(is);
    const auto r = static_cast<Index>(io::read_pod<std::uint64_t>(is));
    const auto din = static_cast<Index>(io::read_pod<std::uint64_t>(is));
    const auto dout = static_cast<Index>(io::read_pod<std::uint64_t>(is));
    if (r <= 0 || din <= 0 || dout <= 0 || r > 4096 || din > (1 << 20) || dout > (1 << 20)) {
      throw DataError("checkpoint adapter dimensions are implausible");
    }
    a.A.resize(r, din);
    a.B.resize(dout, r);
    read_floats(is, a.A.data(), a.A.size());
    read_floats(is, a.B.data(), a.B.size());
    set.push_back(std::move(a));
  }
  return set;
}

}  // namespace instantft
