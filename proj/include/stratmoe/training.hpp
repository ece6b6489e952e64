#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "stratmoe/data.hpp"
#include "stratmoe/model.hpp"

namespace stratmoe {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// Global ℓ2 clip; zero or negative disables clipping.
  double gradient_clip = 5.0;
  // Optional gate terms added to the batch objective; all off by default, in
  // which case the objective is the plain reconstruction MSE.
  /// + coef · mean_i H(w_i), per-sample expert-weight entropy.
  double entropy_coef = 0.0;
  /// + coef · mean_i H(p_i), per-sample stratum entropy.
  double stratum_sharpen_coef = 0.0;
  /// − coef · H(mean_i p_i), entropy of the batch's mean stratum distribution.
  double stratum_balance_coef = 0.0;
  /// − coef · H(mean_i w_i), entropy of the batch's mean expert weights.
  double expert_balance_coef = 0.0;
};

void validate(const TrainConfig& config);

struct ExpertGradient {
  Matrix dictionary;
  Matrix lista_w;
  Matrix lista_s;
  Vector theta;
};

/// Same block layout as MoEModel::parameters().
struct Gradients {
  std::vector<ExpertGradient> experts;
  Matrix query_proj;
  Matrix keys;
  Matrix expert_logits;

  static Gradients zeros_like(const MoEModel& model);

  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;

  double norm() const;
  void scale(double factor);
  void set_zero();
};

/// ‖z − ẑ‖² / L
double loss(std::span<const double> z, std::span<const double> z_hat);

/// Exact gradient of  loss(z, ẑ) + entropy_coef·H(w)  for one sample.
/// `trace` must come from moe_forward(model, z) with the same, unmodified
/// model; a stale trace gives meaningless gradients and is not detected.
Gradients backward(const MoEModel& model, const ForwardTrace& trace, std::span<const double> z,
                   double entropy_coef = 0.0);

/// Adds `weight` times the per-sample gradient into `into`.
void accumulate_backward(const MoEModel& model, const ForwardTrace& trace, std::span<const double> z,
                         double weight, Gradients& into, double entropy_coef = 0.0,
                         std::span<const double> extra_stratum_grad = {},
                         std::span<const double> extra_expert_grad = {});

/// Scales `grads` so its global norm is at most `max_norm`. Returns the pre-clip norm.
double clip_global_norm(Gradients& grads, double max_norm);

struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t step = 0;

  static AdamState for_model(const MoEModel& model);
};

/// One bias-corrected Adam update of a single block; `step` is the 1-based
/// step number after incrementing.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, double learning_rate, const AdamConfig& adam);

/// Adam over every parameter block, then projection: theta clamped at zero
/// and dictionary columns rescaled to unit norm.
void adam_step(MoEModel& model, const Gradients& grads, AdamState& state, double learning_rate,
               const AdamConfig& adam);

void project_constraints(MoEModel& model);

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_entropy = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

using EpochCallback = std::function<void(const EpochStats&)>;

struct BatchGradients {
  Gradients grads;  ///< d(objective)/dθ, averaged over the batch
  double objective = 0.0;
  double mean_loss = 0.0;
  double mean_entropy = 0.0;  ///< mean H(w_i), nats
};

/// Forward and backward over rows[batch[0..]] for the full batch objective
///   mean_i loss_i + entropy·mean H(w_i) + sharpen·mean H(p_i)
///   − stratum_balance·H(p̄) − expert_balance·H(w̄).
BatchGradients batch_gradients(const MoEModel& model, const Matrix& rows, std::span<const std::size_t> batch,
                               const TrainConfig& config);

/// Mini-batch Adam on the reconstruction loss. Batches are drawn from a
/// permutation shuffled with seed + epoch; the run is bitwise deterministic
/// given the config.
TrainHistory train(MoEModel& model, const EmbeddingDataset& dataset, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

/// Mean reconstruction loss over the whole dataset without updating.
double evaluate_loss(const MoEModel& model, const EmbeddingDataset& dataset);

/// CSV with header epoch,loss,entropy,seconds.
void write_history_csv(const TrainHistory& history, std::ostream& out);

}  // namespace stratmoe
