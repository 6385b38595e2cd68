#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mdaif/image.hpp"
#include "mdaif/nn.hpp"
#include "mdaif/tensor.hpp"

namespace mdaif::io {

// "MDAT" tensor file: magic, u32 version, u32 rank, u32 dims[rank], then the
// payload as little-endian f32.
inline constexpr std::uint32_t kTensorFileVersion = 1;
std::size_t tensor_header_size(std::size_t rank);

template <typename T>
void save_tensor(const Tensor<T>& t, const std::filesystem::path& path);
template <typename T>
std::string encode_tensor(const Tensor<T>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);
Tensor<float> decode_tensor(const std::string& bytes);

struct CheckpointMeta {
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// A checkpoint directory holds manifest.json (meta plus a tensor index with
// shapes and byte offsets) and params.bin (concatenated raw little-endian
// tensors in the element width of T).
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors<T>& tensors,
                     const CheckpointMeta& meta);

template <typename T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  NamedTensors<T> tensors;

  const Tensor<T>* find(const std::string& name) const;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir);

// Parameters and running statistics of a store, in registration order.
// Running statistics appear as "<name>.mean" / "<name>.var".
template <typename T>
NamedTensors<T> collect_state(const nn::ParamStore<T>& store);

// Copies checkpoint values into an existing store. Every parameter and
// running statistic must be present with the current shape.
template <typename T>
void restore_state(nn::ParamStore<T>& store, const LoadedCheckpoint<T>& ckpt);

}  // namespace mdaif::io
