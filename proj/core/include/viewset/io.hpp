#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "viewset/config.hpp"
#include "viewset/dataset.hpp"
#include "viewset/model.hpp"
#include "viewset/training.hpp"

namespace viewset::io {

/// Malformed or inconsistent file content. Messages name the file and the location.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// In-memory image of a feature file: "VSF1", u32 rows, u32 dim, rows*dim f32, all little-endian.
struct FeatureTable {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;

  float at(std::size_t r, std::size_t c) const { return values[r * dim + c]; }
  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

inline constexpr std::size_t kFeatureHeaderBytes = 12;

std::vector<std::uint8_t> encode_features(const FeatureTable& t);
FeatureTable decode_features(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
void write_features(const std::filesystem::path& path, const FeatureTable& t);
FeatureTable read_features(const std::filesystem::path& path);

struct ManifestEntry {
  std::string shape_id;
  std::string label_name;
  std::size_t label = 0;
  std::optional<std::size_t> subcategory;
  Split split = Split::Train;
  std::size_t row_start = 0;
  std::size_t row_count = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Tab-separated shape table with '#'-prefixed `key=value` header lines.
struct Manifest {
  std::string dataset;
  std::size_t dim = 0;
  /// Optional view image size, e.g. "224x224x3".
  std::string view_size;
  std::vector<ManifestEntry> entries;

  bool has_subcategories() const;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

Manifest parse_manifest(std::istream& in, const std::string& source = "<stream>");
void write_manifest(std::ostream& out, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Checks row ranges: nonempty, inside [0, num_rows), pairwise disjoint; unique ids.
void validate_manifest(const Manifest& m, std::uint32_t num_rows, const std::string& source);

Dataset load_dataset(const std::filesystem::path& feature_path,
                     const std::filesystem::path& manifest_path);
/// Rows are laid out train, val, test in dataset order. Values are narrowed to f32.
void save_dataset(const Dataset& d, const std::filesystem::path& feature_path,
                  const std::filesystem::path& manifest_path);

/// "VSC1", u32 config length, config text, u32 tensor count, then per tensor
/// u32 name length, name, u32 rows, u32 cols, rows*cols f64; all little-endian.
struct Checkpoint {
  ModelConfig config;
  ModelState tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
void save_checkpoint(const std::filesystem::path& path, ViewSetModel& model);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Rebuilds the model described by a checkpoint and restores all its tensors.
ViewSetModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace viewset::io
