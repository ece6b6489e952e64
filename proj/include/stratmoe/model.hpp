#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stratmoe/numerics.hpp"

namespace stratmoe {

struct ModelDims {
  std::size_t embed_dim = 0;   ///< L
  std::size_t atoms = 32;      ///< M
  std::size_t query_dim = 8;   ///< Q
  std::size_t experts = 0;     ///< E, equals the sparsity menu length
  std::size_t strata = 5;      ///< number of gate strata
  std::size_t lista_steps = 8; ///< T

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Sparse-coding expert: dictionary plus the unrolled LISTA encoder that
/// produces its codes, and the fixed number of atoms it may use.
struct DictionaryExpert {
  Matrix dictionary;  ///< L×M, unit-norm columns
  Matrix lista_w;     ///< M×L
  Matrix lista_s;     ///< M×M
  Vector theta;       ///< M, nonnegative
  std::size_t sparsity = 0;

  friend bool operator==(const DictionaryExpert&, const DictionaryExpert&) = default;
};

/// Two-level gate. A query projection and one key per stratum give stratum
/// probabilities p; each stratum owns a row of expert logits whose softmax is
/// that stratum's expert mixture. The per-expert weight is w = pᵀ·softmax_rows(A).
struct GatingNetwork {
  Matrix query_proj;     ///< Q×L
  Matrix keys;           ///< strata×Q
  Matrix expert_logits;  ///< strata×E

  friend bool operator==(const GatingNetwork&, const GatingNetwork&) = default;
};

struct MoEModel {
  ModelDims dims;
  std::vector<DictionaryExpert> experts;
  GatingNetwork gating;

  std::vector<std::size_t> sparsity_menu() const;

  /// Every trainable block in checkpoint order: per expert (dictionary,
  /// lista_w, lista_s, theta), then query_proj, keys, expert_logits.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;

  friend bool operator==(const MoEModel&, const MoEModel&) = default;
};

/// Checks internal shape consistency; throws DimensionError/ValueError.
void validate(const MoEModel& model);

MoEModel init_model(const ModelDims& dims, const std::vector<std::size_t>& sparsity_menu,
                    std::uint64_t seed);

/// Rebuilds lista_w = Dᵀ/ν and lista_s = I − DᵀD/ν with ν = spectral_norm_sq(D).
void reset_lista_from_dictionary(DictionaryExpert& expert);

struct ListaTrace {
  Vector drive;                 ///< lista_w·z
  std::vector<Vector> pre;      ///< pre[t] = drive + lista_s·codes[t], t < T
  std::vector<Vector> codes;    ///< codes[0] = 0, codes[t+1] = shrink(pre[t])
};

/// Dense LISTA code after `steps` unrolled iterations.
Vector lista_encode(const DictionaryExpert& expert, std::span<const double> z, std::size_t steps);
Vector lista_encode(const DictionaryExpert& expert, std::span<const double> z, std::size_t steps,
                    ListaTrace* trace);

struct Hardened {
  Vector code;
  BitMask mask;
};

/// Keeps the `sparsity` largest-magnitude entries. The backward pass treats
/// this as identity (straight-through).
Hardened harden(std::span<const double> code, std::size_t sparsity);

struct GateOutput {
  Vector query;           ///< q, length Q
  Vector stratum_logits;  ///< length strata
  Vector stratum_probs;   ///< p
  Matrix mixtures;        ///< B, strata×E, row-stochastic
  Vector weights;         ///< w = pᵀB
};

GateOutput gate(const GatingNetwork& gating, std::span<const double> z);

struct ExpertTrace {
  ListaTrace lista;
  Hardened hard;
  Vector reconstruction;  ///< D·γ̂
};

/// Everything the backward pass needs for one sample.
struct ForwardTrace {
  GateOutput gate;
  std::vector<ExpertTrace> experts;
  Vector output;  ///< ẑ = Σ w_e D_e γ̂_e
};

ForwardTrace moe_forward(const MoEModel& model, std::span<const double> z);

// Checkpoint: "SPRB", u16 version, u32 L M Q E strata T, u32×E sparsity
// menu, then all parameter blocks in `parameters()` order as little-endian
// doubles.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_model(const MoEModel& model);
MoEModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_checkpoint(const MoEModel& model, const std::filesystem::path& path);
MoEModel load_checkpoint(const std::filesystem::path& path);

}  // namespace stratmoe
