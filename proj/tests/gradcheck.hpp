#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stratmoe/model.hpp"
#include "stratmoe/training.hpp"

namespace gradcheck {

struct Result {
  /// Against the straight-through surrogate, every parameter block.
  double max_rel_error = 0.0;
  /// Against the true forward, on blocks where the two coincide: dictionaries,
  /// gate parameters, and the LISTA parameters of an expert whose top-k keeps
  /// every atom.
  double max_rel_error_exact = 0.0;
  std::size_t checked = 0;
  std::size_t checked_exact = 0;
  std::size_t resamples = 0;
  std::string worst;  ///< "block[block:index]" of the largest surrogate error
  std::vector<bool> block_checked;
};

inline const char* block_name(std::size_t b, std::size_t experts) {
  static const char* expert_blocks[] = {"dictionary", "lista_w", "lista_s", "theta"};
  if (b < 4 * experts) return expert_blocks[b % 4];
  static const char* gate_blocks[] = {"query_proj", "keys", "expert_logits"};
  return gate_blocks[b - 4 * experts];
}

/// Tiny model (L=8, M=4, E=2 with sparsity {2, 4}, strata=2, T=2) with
/// randomized gate logits and thresholds, and a batch whose LISTA pre-activations and top-k orderings stay
/// at least `margin` away from a kink or tie (otherwise the batch is redrawn).
struct Problem {
  stratmoe::MoEModel model;
  stratmoe::Matrix rows;
  std::vector<std::size_t> batch;
  std::size_t resamples = 0;
};

inline Problem make_problem(std::uint64_t seed, const stratmoe::TrainConfig& cfg, double margin = 1e-4,
                            std::size_t batch_size = 4) {
  stratmoe::ModelDims dims{8, 4, 3, 2, 2, 2};
  Problem prob{stratmoe::init_model(dims, {2, 4}, seed), stratmoe::Matrix(batch_size, 8), {}, 0};
  stratmoe::Rng rng(seed * 7919 + 17);
  for (double& a : prob.model.gating.expert_logits.flat()) a = rng.normal();
  for (auto& ex : prob.model.experts)
    for (double& t : ex.theta) t = 0.02 + 0.1 * rng.uniform();
  for (std::size_t i = 0; i < batch_size; ++i) prob.batch.push_back(i);

  for (;;) {
    for (double& x : prob.rows.flat()) x = rng.normal();
    std::vector<std::vector<double>> zs;
    for (std::size_t i = 0; i < batch_size; ++i) zs.emplace_back(prob.rows.row(i).begin(), prob.rows.row(i).end());
    const auto f = oracle::naive_objective(prob.model, zs, cfg);
    if (f.kink_margin >= margin && f.topk_margin >= margin) return prob;
    ++prob.resamples;
  }
}

/// Analytic batch gradients against central differences of the naive
/// objective, h = 1e-5, on every coordinate with |analytic| > 1e-8.
/// Relative error is |a − fd| / max(|a|, |fd|).
inline Result check(std::uint64_t seed, const stratmoe::TrainConfig& cfg) {
  Problem prob = make_problem(seed, cfg);
  auto& model = prob.model;
  const auto analytic = stratmoe::batch_gradients(model, prob.rows, prob.batch, cfg);
  const auto grad_blocks = analytic.grads.blocks();

  std::vector<std::vector<double>> zs;
  for (std::size_t i = 0; i < prob.rows.rows(); ++i)
    zs.emplace_back(prob.rows.row(i).begin(), prob.rows.row(i).end());

  Result result;
  result.resamples = prob.resamples;
  const auto base = oracle::naive_objective(model, zs, cfg);
  auto exact_block = [&](std::size_t b) {
    if (b >= 4 * model.dims.experts || b % 4 == 0) return true;
    return model.experts[b / 4].sparsity == model.dims.atoms;
  };
  auto rel_error = [](double a, double fd) { return std::abs(a - fd) / std::max(std::abs(a), std::abs(fd)); };

  auto params = model.parameters();
  result.block_checked.assign(params.size(), false);
  constexpr double h = 1e-5;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double a = grad_blocks[b][i];
      if (std::abs(a) <= 1e-8) continue;
      const double x = params[b][i];
      const double xp = x + h, xm = x - h;
      const oracle::Real step = static_cast<oracle::Real>(xp) - xm;
      params[b][i] = xp;
      const auto fp = oracle::naive_objective(model, zs, cfg, &base.passes).value;
      const auto fp_exact = exact_block(b) ? oracle::naive_objective(model, zs, cfg).value : 0;
      params[b][i] = xm;
      const auto fm = oracle::naive_objective(model, zs, cfg, &base.passes).value;
      const auto fm_exact = exact_block(b) ? oracle::naive_objective(model, zs, cfg).value : 0;
      params[b][i] = x;
      if (exact_block(b)) {
        const double fd_exact = static_cast<double>((fp_exact - fm_exact) / step);
        result.max_rel_error_exact = std::max(result.max_rel_error_exact, rel_error(a, fd_exact));
        ++result.checked_exact;
      }
      const double rel = rel_error(a, static_cast<double>((fp - fm) / step));
      ++result.checked;
      result.block_checked[b] = true;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = std::string(block_name(b, model.dims.experts)) + "[" + std::to_string(b) + ":" +
                       std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace gradcheck
