#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stratmoe/data.hpp"
#include "stratmoe/model.hpp"

namespace stratmoe {

struct StratumAssignment {
  std::vector<std::uint32_t> stratum_ids;  ///< argmax of p, lowest index on ties
  Matrix stratum_probs;                    ///< n×strata, p per sample
  Matrix expert_weights;                   ///< n×E, w per sample
};

StratumAssignment assign_strata(const MoEModel& model, const EmbeddingDataset& dataset);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> x);

struct StratumDim {
  std::size_t intrinsic_dim = 0;
  std::size_t samples = 0;
  /// Fewer than two samples, or no variance at all.
  bool degenerate = false;
};

/// PCA intrinsic dimension of each stratum's rows at the given variance share.
std::vector<StratumDim> intrinsic_dims(const EmbeddingDataset& dataset,
                                       std::span<const std::uint32_t> stratum_ids, std::size_t strata,
                                       double fraction = 0.75);

/// Mean over a stratum's samples of Σ_e w_e·s_e. Empty strata are nullopt.
std::vector<std::optional<double>> weighted_sparsity(const Matrix& expert_weights,
                                                     std::span<const std::uint32_t> stratum_ids,
                                                     std::size_t strata,
                                                     std::span<const std::size_t> sparsity_menu);

/// Shannon entropy in nats, 0·ln 0 = 0. Throws ValueError unless `w` is a
/// distribution within 1e-8.
double gating_entropy(std::span<const double> w);

struct ExpertDistances {
  Matrix matched_frobenius;  ///< greedy |cos| column matching, sign-aligned
  Matrix mean_principal_angle;
};

/// ‖D_a − P·D_b‖_F after greedily pairing columns by largest |cosine| and
/// flipping signs of the matched columns of D_b.
double matched_dictionary_distance(const Matrix& a, const Matrix& b);

ExpertDistances inter_expert_distance(const MoEModel& model);

struct ExpertUsage {
  std::vector<std::size_t> histogram;  ///< argmax_e w_e counts
  Matrix mean_mixture;                 ///< strata×E mean w per stratum; empty strata rows are zero
};

ExpertUsage expert_usage(const Matrix& expert_weights, std::span<const std::uint32_t> stratum_ids,
                         std::size_t strata);

/// Rows projected onto the top three principal components of the centered data.
Matrix project3d(const EmbeddingDataset& dataset);

/// Chance-corrected agreement of two labelings (Hubert-Arabie ARI).
double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

struct StratumStats {
  std::size_t samples = 0;
  std::size_t intrinsic_dim = 0;
  bool degenerate = false;
  std::optional<double> weighted_sparsity;
  std::optional<double> mean_gating_entropy;
};

struct StratumReport {
  double variance_fraction = 0.75;
  std::vector<std::size_t> sparsity_menu;
  std::vector<std::string> domain_names;
  std::vector<StratumStats> strata;
  std::vector<std::vector<std::size_t>> domain_by_stratum;  ///< [domain][stratum] counts
  ExpertUsage usage;
  ExpertDistances distances;
  Matrix projection;  ///< n×3
  std::vector<std::uint32_t> stratum_ids;
  std::vector<std::uint32_t> domain_ids;
  double mean_loss = 0.0;
};

StratumReport build_report(const MoEModel& model, const EmbeddingDataset& dataset,
                           double variance_fraction = 0.75);

}  // namespace stratmoe
