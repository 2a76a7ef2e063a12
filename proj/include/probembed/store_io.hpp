#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "probembed/embedding.hpp"

namespace probembed {

inline constexpr std::uint32_t kStoreFormatVersion = 1;

// .pemb layout (little-endian):
//   "PEMB" | u32 version | u32 dim | u64 count | u8 sigma_mode | 7 zero bytes
//   count x { i64 label | dim x f32 mu | (1 or dim) x f32 sigma2 }
std::vector<std::uint8_t> encode_store(const EmbeddingStore& store);
EmbeddingStore decode_store(std::span<const std::uint8_t> bytes,
                            std::optional<std::size_t> expected_dim = {});

void save_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_store(const std::filesystem::path& path,
                          std::optional<std::size_t> expected_dim = {});

}  // namespace probembed
