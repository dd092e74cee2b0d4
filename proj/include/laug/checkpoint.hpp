#pragma once

#include <filesystem>

#include "laug/network_spec.hpp"
#include "laug/tensor.hpp"

namespace laug {

// Checkpoint container: magic "LAUG", format version, model kind tag, the
// producing NetworkSpec, optional string metadata, and ordered named tensors
// stored as little-endian 32-bit floats. Round trips are bit-exact.

constexpr std::uint16_t kCheckpointVersionMajor = 1;
constexpr std::uint16_t kCheckpointVersionMinor = 0;

enum class ModelKind : std::uint32_t { aae = 1, dynamics = 2, cgan = 3, unified = 4 };

const char* model_kind_name(ModelKind kind);

struct CheckpointMagicError : FormatError {
  using FormatError::FormatError;
};
struct CheckpointVersionError : FormatError {
  using FormatError::FormatError;
};
struct CheckpointKindError : FormatError {
  using FormatError::FormatError;
};
struct CheckpointTruncatedError : FormatError {
  using FormatError::FormatError;
};

struct CheckpointData {
  ModelKind kind = ModelKind::aae;
  std::uint16_t version_major = kCheckpointVersionMajor;
  std::uint16_t version_minor = kCheckpointVersionMinor;
  NetworkSpec spec;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path, ModelKind expected_kind);

// raw tensor sidecar: shape header plus little-endian floats, for test fixtures
void save_raw_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_raw_tensor(const std::filesystem::path& path);

}  // namespace laug
