#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpf/features.hpp"
#include "cpf/model.hpp"
#include "cpf/training.hpp"

namespace cpf {

/// Everything needed to resume training or evaluate without the training data.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config;  // key=value lines echoing the training configuration
  std::uint64_t seed = 0;
  CpfParams params;
  AdamState adam;
  TextEmbeddings text;
  std::vector<std::size_t> shallow_blocks;  // stored blocks the model was trained on
};

/// Little-endian "CPFK" container; tensors are stored at full f64 precision
/// so a round trip is exact.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// FormatError with the byte offset on malformed input.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cpf
