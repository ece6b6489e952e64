#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stratmoe/numerics.hpp"

namespace stratmoe {

/// n×L embeddings with one domain label per row.
struct EmbeddingDataset {
  Matrix embeddings;
  std::vector<std::uint32_t> domain_ids;
  std::vector<std::string> domain_names;
  /// Ordered key/value pairs (model name, pooling, ...). Order is preserved on disk.
  std::vector<std::pair<std::string, std::string>> source_meta;

  std::size_t size() const noexcept { return embeddings.rows(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

/// Throws ValueError/DimensionError when an invariant does not hold.
void validate(const EmbeddingDataset& ds);

struct StratumSpec {
  std::size_t dim = 0;
  std::size_t samples = 0;
  double offset_scale = 5.0;
  double coeff_scale = 1.0;
};

struct SynthSpec {
  std::size_t ambient_dim = 64;
  std::vector<StratumSpec> strata;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);

struct SynthResult {
  EmbeddingDataset dataset;
  std::vector<std::uint32_t> ground_truth;  ///< stratum index per row
  std::vector<Matrix> bases;                ///< orthonormal L×d_i basis per stratum
  std::vector<Vector> centers;              ///< μ_i per stratum
};

/// Union of affine subspaces: x = μ_i + U_i·c + ε, c ~ N(0, coeff²I), ε ~ N(0, σ²I).
SynthResult synth_generate(const SynthSpec& spec);

// Dataset file: "STRD", u16 version, u64 n, u64 L, domain-name table
// (u32 count; u32 len + UTF-8 each), u32×n domain ids, n·L little-endian
// doubles row-major, meta table (u32 count; len-prefixed key, value). No padding.
inline constexpr std::uint16_t kDatasetVersion = 1;

std::vector<std::uint8_t> serialize_dataset(const EmbeddingDataset& ds);
EmbeddingDataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path);
EmbeddingDataset load_dataset(const std::filesystem::path& path);

/// Row concatenation in input order. Domain names are unioned in first-seen
/// order and ids remapped onto the merged table; metadata from later inputs
/// is appended when the key is new.
EmbeddingDataset merge(const std::vector<EmbeddingDataset>& datasets);

/// Ground-truth sidecar: header "index,stratum", one row per sample.
std::string ground_truth_csv(std::span<const std::uint32_t> labels);
/// Inverse of ground_truth_csv; rows must be in index order. Throws FormatError.
std::vector<std::uint32_t> parse_ground_truth_csv(const std::string& text);

/// Rows of `ds` selected by index, in the given order.
Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows);

}  // namespace stratmoe
