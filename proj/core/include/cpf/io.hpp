#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpf/composition_space.hpp"
#include "cpf/features.hpp"

namespace cpf {

// ---- .cpff feature files ------------------------------------------------
//
// Little-endian. Header (44 bytes):
//   "CPFF" | version u32 | D T B d M N reserved : u32 | count u64
// Then per image:
//   id_len u16 | id utf8 | attr u32 | obj u32 | deep class D f32 |
//   deep patches T*D f32 | B x (shallow class D f32 | shallow patches T*D f32)

struct FeatureFileHeader {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kSize = 44;

  std::uint32_t version = kVersion;
  std::uint32_t dim = 0;             // D
  std::uint32_t tokens = 0;          // T
  std::uint32_t blocks = 0;          // B
  std::uint32_t text_dim = 0;        // d
  std::uint32_t num_attributes = 0;  // M
  std::uint32_t num_objects = 0;     // N
  std::uint32_t reserved = 0;
  std::uint64_t count = 0;

  friend bool operator==(const FeatureFileHeader&, const FeatureFileHeader&) = default;
};

struct FeatureFile {
  FeatureFileHeader header;
  std::vector<FeatureBundle> bundles;
};

/// Serializes `bundles` (count is taken from the span). Values are narrowed
/// to f32. Throws DimensionError when a bundle disagrees with the header and
/// DataError for labels outside [0, M) x [0, N).
std::vector<std::uint8_t> encode_features(std::span<const FeatureBundle> bundles,
                                          FeatureFileHeader header);
/// Decodes and validates a feature file; FormatError carries the byte offset.
FeatureFile decode_features(std::span<const std::uint8_t> bytes);

void write_features(const std::filesystem::path& path, std::span<const FeatureBundle> bundles,
                    const FeatureFileHeader& header);
FeatureFile read_features(const std::filesystem::path& path);

// ---- .cpft text embedding files -----------------------------------------
//
// Little-endian: "CPFT" | version u32 | d u32 | M u32 | N u32, then M
// attribute rows and N object rows, each `name_len u16 | name | d f32`.
// Row order defines label indices.

std::vector<std::uint8_t> encode_text_embeddings(const TextEmbeddings& text);
TextEmbeddings decode_text_embeddings(std::span<const std::uint8_t> bytes);
void write_text_embeddings(const std::filesystem::path& path, const TextEmbeddings& text);
TextEmbeddings load_text_embeddings(const std::filesystem::path& path);

// ---- word vector tables (GloVe text format) -----------------------------

struct WordTable {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;
};

/// One `word v1 ... vd` entry per line. Throws DataError on width
/// disagreement or duplicate words.
WordTable parse_word_table(const std::string& text);
WordTable read_word_table(const std::filesystem::path& path);

/// Embeds class names as rows of a |names| x d matrix. A name found in the
/// table maps to its vector verbatim; otherwise it is split on '.', '_' or
/// ' ' and embedded as the mean of its word vectors. Lookups fall back to
/// lower case. Throws DataError for missing words.
Tensor embed_names(const WordTable& table, std::span<const std::string> names);

/// Builds TextEmbeddings for the space's vocabularies from a word table.
TextEmbeddings text_embeddings_from_words(const WordTable& table, const CompositionSpace& space);

// ---- split files ----------------------------------------------------------
//
// Sections [attributes] [objects] [train_seen] [val_seen] [val_unseen]
// [test_seen] [test_unseen]; names one per line, pairs as `attr,obj`.
// '#' starts a comment.

CompositionSpace parse_splits(const std::string& text);
CompositionSpace load_splits(const std::filesystem::path& path);
std::string format_splits(const CompositionSpace& space);
void write_splits(const std::filesystem::path& path, const CompositionSpace& space);

// ---- helpers ---------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cpf
