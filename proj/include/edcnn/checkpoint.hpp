#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "edcnn/model.hpp"

namespace edcnn {

// Container layout (little-endian, no padding):
//   magic[4]  version:u32  header:(u32, u32, u32, u8)  count:u32
//   per record: name_len:u16 name[name_len] rank:u8 dims:u32[rank] values:f32[prod(dims)]
// Model checkpoints use magic "EDC1" with header (n_blocks, block_filters,
// sobel_filters, flags); flags bit 0 = edge module, bit 1 = dense connections.

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::array<char, 4> kModelMagic = {'E', 'D', 'C', '1'};
inline constexpr std::array<char, 4> kExtractorMagic = {'E', 'D', 'X', '1'};

enum class CheckpointErrorKind { io, bad_magic, version_mismatch, shape_mismatch, truncated, malformed };

const char* to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct ContainerHeader {
  std::array<std::uint32_t, 3> fields{};
  std::uint8_t flags = 0;
};

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Container {
  std::array<char, 4> magic{};
  std::uint32_t version = kContainerVersion;
  ContainerHeader header;
  std::vector<NamedArray> arrays;
};

std::vector<std::uint8_t> encode_container(const Container& c);
/// Parses bytes; verifies magic against `expected_magic`, then the version.
Container decode_container(const std::vector<std::uint8_t>& bytes, const std::array<char, 4>& expected_magic);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, const std::array<char, 4>& expected_magic);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Validates every record against the embedded config. When `expected` is given the
/// embedded topology must also match it, otherwise shape_mismatch is raised.
Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace edcnn
