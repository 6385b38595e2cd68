#include "mdaif/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace mdaif::io {

namespace {

using nlohmann::json;

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.append(bytes, sizeof(U));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos > in.size() || in.size() - pos < sizeof(U)) throw FormatError("size mismatch: truncated data");
  char bytes[sizeof(U)];
  std::memcpy(bytes, in.data() + pos, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  pos += sizeof(U);
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

std::size_t tensor_header_size(std::size_t rank) { return 8 + 4 + 4 * rank; }

template <typename T>
std::string encode_tensor(const Tensor<T>& t) {
  std::string out = "MDAT";
  put_le<std::uint32_t>(out, kTensorFileVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (T v : t.vec()) put_le<float>(out, static_cast<float>(v));
  return out;
}

template <typename T>
void save_tensor(const Tensor<T>& t, const std::filesystem::path& path) {
  spit(path, encode_tensor(t));
}

Tensor<float> decode_tensor(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "MDAT") != 0) throw FormatError("bad magic: not an MDAT file");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kTensorFileVersion) throw FormatError("unsupported MDAT version " + std::to_string(version));
  const auto rank = get_le<std::uint32_t>(bytes, pos);
  if (rank == 0 || rank > 16) throw FormatError("size mismatch: implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get_le<std::uint32_t>(bytes, pos);
    if (d == 0) throw FormatError("size mismatch: zero dimension");
    shape.push_back(d);
  }
  const std::size_t n = shape_numel(shape);
  if (bytes.size() - pos != n * sizeof(float)) {
    throw FormatError("size mismatch: payload has " + std::to_string(bytes.size() - pos) +
                      " bytes, shape " + shape_str(shape) + " needs " + std::to_string(n * 4));
  }
  std::vector<float> data(n);
  for (auto& v : data) v = get_le<float>(bytes, pos);
  return Tensor<float>(std::move(shape), std::move(data));
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  return decode_tensor(slurp(path));
}

template <typename T>
const Tensor<T>* LoadedCheckpoint<T>::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors<T>& tensors,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  std::string blob;
  json index = json::array();
  std::set<std::string> seen;
  for (const auto& [name, t] : tensors) {
    if (!seen.insert(name).second) throw std::invalid_argument("duplicate tensor in checkpoint: " + name);
    const std::size_t offset = blob.size();
    for (T v : t.vec()) put_le<T>(blob, v);
    index.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"nbytes", blob.size() - offset}});
  }
  json manifest = {{"format", "mdaif-checkpoint"},
                   {"version", 1},
                   {"dtype", dtype_name<T>()},
                   {"config", meta.config},
                   {"step", meta.step},
                   {"seed", meta.seed},
                   {"rng_state", meta.rng_state},
                   {"tensors", index}};
  spit(dir / "manifest.json", manifest.dump(2) + "\n");
  spit(dir / "params.bin", blob);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(slurp(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  const std::string blob = slurp(dir / "params.bin");
  LoadedCheckpoint<T> out;
  try {
    if (manifest.at("format") != "mdaif-checkpoint") throw FormatError("not an mdaif checkpoint");
    const std::string dtype = manifest.at("dtype");
    const std::size_t width = dtype == "f32" ? 4 : (dtype == "f64" ? 8 : 0);
    if (width == 0) throw FormatError("unknown checkpoint dtype " + dtype);
    out.meta.config = manifest.at("config");
    out.meta.step = manifest.at("step");
    out.meta.seed = manifest.at("seed");
    out.meta.rng_state = manifest.at("rng_state");
    std::size_t expected_offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name");
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset");
      const std::size_t nbytes = entry.at("nbytes");
      const std::size_t n = shape_numel(shape);
      if (offset != expected_offset || nbytes != n * width || offset + nbytes > blob.size()) {
        throw FormatError("checkpoint tensor " + name + " has inconsistent offsets");
      }
      expected_offset += nbytes;
      std::vector<T> data(n);
      std::size_t pos = offset;
      for (auto& v : data) {
        v = width == 4 ? static_cast<T>(get_le<float>(blob, pos)) : static_cast<T>(get_le<double>(blob, pos));
      }
      out.tensors.emplace_back(name, Tensor<T>(shape, std::move(data)));
    }
    if (expected_offset != blob.size()) throw FormatError("checkpoint blob has trailing bytes");
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  return out;
}

template <typename T>
NamedTensors<T> collect_state(const nn::ParamStore<T>& store) {
  NamedTensors<T> out;
  for (const auto& [name, t] : store.params()) out.emplace_back(name, t);
  for (const auto& [name, s] : store.stats()) {
    out.emplace_back(name + ".mean", Tensor<T>(Shape{s->mean.size()}, s->mean));
    out.emplace_back(name + ".var", Tensor<T>(Shape{s->var.size()}, s->var));
  }
  return out;
}

template <typename T>
void restore_state(nn::ParamStore<T>& store, const LoadedCheckpoint<T>& ckpt) {
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<T>& {
    const Tensor<T>* t = ckpt.find(name);
    if (!t) throw FormatError("checkpoint is missing tensor " + name);
    if (t->shape() != shape) {
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_str(t->shape()) +
                           ", model expects " + shape_str(shape));
    }
    return *t;
  };
  for (auto& [name, param] : store.params()) {
    const Tensor<T>& src = fetch(name, param.shape());
    std::copy(src.vec().begin(), src.vec().end(), param.data_mut().begin());
  }
  for (const auto& [name, s] : store.stats()) {
    const Tensor<T>& m = fetch(name + ".mean", Shape{s->mean.size()});
    const Tensor<T>& v = fetch(name + ".var", Shape{s->var.size()});
    s->mean = m.vec();
    s->var = v.vec();
  }
}

#define MDAIF_INSTANTIATE_IO(T)                                                                 \
  template std::string encode_tensor<T>(const Tensor<T>&);                                      \
  template void save_tensor<T>(const Tensor<T>&, const std::filesystem::path&);                 \
  template struct LoadedCheckpoint<T>;                                                          \
  template void save_checkpoint<T>(const std::filesystem::path&, const NamedTensors<T>&,        \
                                   const CheckpointMeta&);                                      \
  template LoadedCheckpoint<T> load_checkpoint<T>(const std::filesystem::path&);                \
  template NamedTensors<T> collect_state<T>(const nn::ParamStore<T>&);                          \
  template void restore_state<T>(nn::ParamStore<T>&, const LoadedCheckpoint<T>&);

MDAIF_INSTANTIATE_IO(float)
MDAIF_INSTANTIATE_IO(double)

}  // namespace mdaif::io
