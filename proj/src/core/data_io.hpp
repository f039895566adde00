// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary embedding files and JSON-lines dataset manifests.
//
// Embedding file layout (all integers little-endian, no padding):
//   offset 0   4 bytes   magic "ZSML"
//   offset 4   u16       version = 1
//   offset 6   u8        dtype (0 = float32 LE)
//   offset 7   u64       rows
//   offset 15  u64       cols
//   offset 23  rows*cols float32 LE, row-major

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace zsmil {

inline constexpr char kEmbeddingMagic[4] = {'Z', 'S', 'M', 'L'};
inline constexpr std::uint16_t kEmbeddingVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;
inline constexpr std::size_t kEmbeddingHeaderBytes = 23;

struct EmbeddingHeader {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};

/// Serializes m as one embedding block. Values are narrowed to float32;
/// throws NonFiniteValue if any value is (or narrows to) a non-finite float.
void write_embeddings(std::ostream& out, const Matrix& m);
void write_embeddings(const Matrix& m, const std::filesystem::path& path);

/// Reads one block from the stream's current position.
Matrix read_embeddings(std::istream& in);
/// Reads a whole file; trailing bytes after the payload are a ParseError.
Matrix read_embeddings(const std::filesystem::path& path);
/// Validates magic/version/dtype and the payload length without decoding values.
EmbeddingHeader read_embedding_header(const std::filesystem::path& path);

enum class Split { TrainPool, Val, Test };

const char* split_name(Split s) noexcept;
std::optional<Split> parse_split(std::string_view name) noexcept;

struct ManifestEntry {
  std::string slide_id;
  std::size_t label = 0;
  Split split = Split::TrainPool;
  std::string path;  // as written in the manifest, relative to its directory
  std::size_t n_patches = 0;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }
  std::vector<ManifestEntry> split(Split s) const;
  const ManifestEntry* find(std::string_view slide_id) const;
};

/// Parses and validates a JSON-lines manifest. When n_classes is given, labels
/// must lie in [0, n_classes). Every referenced file must exist and its row
/// count must match n_patches. Unknown fields are ignored; blank lines skipped.
Manifest load_manifest(const std::filesystem::path& path,
                       std::optional<std::size_t> n_classes = std::nullopt);

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

struct Bag {
  ManifestEntry entry;
  Matrix features;
};

std::vector<Bag> load_bags(const Manifest& manifest, Split split);

}  // namespace zsmil
