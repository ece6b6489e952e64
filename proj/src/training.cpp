#include "stratmoe/training.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace stratmoe {

void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ValueError("learning rate must be positive");
  if (config.batch_size == 0) throw ValueError("batch size must be at least 1");
  if (!(config.adam.beta1 >= 0.0 && config.adam.beta1 < 1.0) ||
      !(config.adam.beta2 >= 0.0 && config.adam.beta2 < 1.0) || !(config.adam.epsilon > 0.0))
    throw ValueError("Adam betas must lie in [0, 1) and epsilon must be positive");
  for (double c : {config.entropy_coef, config.stratum_sharpen_coef, config.stratum_balance_coef,
                   config.expert_balance_coef})
    if (!std::isfinite(c)) throw ValueError("gate term coefficients must be finite");
}

Gradients Gradients::zeros_like(const MoEModel& model) {
  Gradients g;
  const auto& d = model.dims;
  for (std::size_t e = 0; e < model.experts.size(); ++e)
    g.experts.push_back({Matrix(d.embed_dim, d.atoms), Matrix(d.atoms, d.embed_dim), Matrix(d.atoms, d.atoms),
                         Vector(d.atoms, 0.0)});
  g.query_proj = Matrix(d.query_dim, d.embed_dim);
  g.keys = Matrix(d.strata, d.query_dim);
  g.expert_logits = Matrix(d.strata, d.experts);
  return g;
}

std::vector<std::span<double>> Gradients::blocks() {
  std::vector<std::span<double>> out;
  for (auto& e : experts) {
    out.push_back(e.dictionary.flat());
    out.push_back(e.lista_w.flat());
    out.push_back(e.lista_s.flat());
    out.push_back(e.theta);
  }
  out.push_back(query_proj.flat());
  out.push_back(keys.flat());
  out.push_back(expert_logits.flat());
  return out;
}

std::vector<std::span<const double>> Gradients::blocks() const {
  auto spans = const_cast<Gradients*>(this)->blocks();
  return {spans.begin(), spans.end()};
}

double Gradients::norm() const {
  double sq = 0.0;
  for (auto b : blocks())
    for (double x : b) sq += x * x;
  return std::sqrt(sq);
}

void Gradients::scale(double factor) {
  for (auto b : blocks())
    for (double& x : b) x *= factor;
}

void Gradients::set_zero() {
  for (auto b : blocks()) std::fill(b.begin(), b.end(), 0.0);
}

double loss(std::span<const double> z, std::span<const double> z_hat) {
  if (z.size() != z_hat.size() || z.empty())
    throw DimensionError("loss: lengths " + std::to_string(z.size()) + " and " + std::to_string(z_hat.size()));
  double sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - z_hat[i];
    sq += d * d;
  }
  return sq / static_cast<double>(z.size());
}

namespace {

// Backprop of p = softmax(x) given dL/dp: dL/dx = p ⊙ (g − ⟨g, p⟩).
Vector softmax_backward(std::span<const double> probs, std::span<const double> grad) {
  const double inner = dot(probs, grad);
  Vector out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (grad[i] - inner);
  return out;
}

}  // namespace

void accumulate_backward(const MoEModel& model, const ForwardTrace& trace, std::span<const double> z,
                         double weight, Gradients& into, double entropy_coef,
                         std::span<const double> extra_stratum_grad,
                         std::span<const double> extra_expert_grad) {
  const auto& d = model.dims;
  if (z.size() != d.embed_dim || trace.output.size() != d.embed_dim || trace.experts.size() != d.experts)
    throw DimensionError("backward: trace or input does not match the model");

  // dL/dẑ
  Vector g_out(d.embed_dim);
  const double mse_scale = 2.0 / static_cast<double>(d.embed_dim);
  for (std::size_t i = 0; i < d.embed_dim; ++i) g_out[i] = mse_scale * (trace.output[i] - z[i]);

  const auto& gate_out = trace.gate;
  Vector g_weights(d.experts);
  for (std::size_t e = 0; e < d.experts; ++e) {
    g_weights[e] = dot(g_out, trace.experts[e].reconstruction);
    if (entropy_coef != 0.0) {
      const double w = gate_out.weights[e];
      if (w > 0.0) g_weights[e] -= entropy_coef * (std::log(w) + 1.0);
    }
  }

  if (!extra_expert_grad.empty()) axpy(1.0, extra_expert_grad, g_weights);

  // Experts.
  for (std::size_t e = 0; e < d.experts; ++e) {
    const auto& expert = model.experts[e];
    const auto& et = trace.experts[e];
    auto& ge = into.experts[e];
    const double we = gate_out.weights[e];
    if (we == 0.0) continue;

    // ẑ_e = D γ̂ contributes w_e·D γ̂; dL/dD = w_e g_out γ̂ᵀ.
    add_outer(ge.dictionary, weight * we, g_out, et.hard.code);
    // Straight-through: the hardened-code gradient flows to the dense code unmasked.
    Vector g_code = matvec_transposed(expert.dictionary, g_out);
    for (double& x : g_code) x *= we;

    Vector g_drive(d.atoms, 0.0);
    for (std::size_t t = d.lista_steps; t-- > 0;) {
      const Vector& pre = et.lista.pre[t];
      Vector g_pre(d.atoms, 0.0);
      for (std::size_t i = 0; i < d.atoms; ++i) {
        // Zero subgradient on the dead zone |pre| ≤ θ, kink included.
        if (std::abs(pre[i]) > expert.theta[i]) {
          g_pre[i] = g_code[i];
          ge.theta[i] -= weight * g_code[i] * (pre[i] > 0.0 ? 1.0 : -1.0);
        }
      }
      axpy(1.0, g_pre, g_drive);
      add_outer(ge.lista_s, weight, g_pre, et.lista.codes[t]);
      g_code = matvec_transposed(expert.lista_s, g_pre);
    }
    add_outer(ge.lista_w, weight, g_drive, z);
  }

  // Gate: w = Σ_s p_s B_s.
  const std::size_t strata = d.strata;
  Vector g_probs(strata);
  for (std::size_t s = 0; s < strata; ++s) {
    auto mixture = gate_out.mixtures.row(s);
    g_probs[s] = dot(mixture, g_weights);
    Vector g_mix(d.experts);
    for (std::size_t e = 0; e < d.experts; ++e) g_mix[e] = gate_out.stratum_probs[s] * g_weights[e];
    const Vector g_logits = softmax_backward(mixture, g_mix);
    axpy(weight, g_logits, into.expert_logits.row(s));
  }

  if (!extra_stratum_grad.empty()) axpy(1.0, extra_stratum_grad, g_probs);
  const Vector g_sigma = softmax_backward(gate_out.stratum_probs, g_probs);
  const double inv_sqrt_q = 1.0 / std::sqrt(static_cast<double>(d.query_dim));
  Vector g_query(d.query_dim, 0.0);
  for (std::size_t s = 0; s < strata; ++s) {
    const double gs = g_sigma[s] * inv_sqrt_q;
    if (gs == 0.0) continue;
    axpy(weight * gs, gate_out.query, into.keys.row(s));
    axpy(gs, model.gating.keys.row(s), g_query);
  }
  add_outer(into.query_proj, weight, g_query, z);
}

Gradients backward(const MoEModel& model, const ForwardTrace& trace, std::span<const double> z,
                   double entropy_coef) {
  Gradients g = Gradients::zeros_like(model);
  accumulate_backward(model, trace, z, 1.0, g, entropy_coef);
  return g;
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double n = grads.norm();
  if (max_norm > 0.0 && n > max_norm) grads.scale(max_norm / n);
  return n;
}

AdamState AdamState::for_model(const MoEModel& model) {
  return {Gradients::zeros_like(model), Gradients::zeros_like(model), 0};
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, double learning_rate, const AdamConfig& adam) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw DimensionError("adam_update: buffer sizes differ");
  const double t = static_cast<double>(step);
  const double bias1 = 1.0 - std::pow(adam.beta1, t);
  const double bias2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * grad[i];
    v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bias1;
    const double v_hat = v[i] / bias2;
    param[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + adam.epsilon);
  }
}

void project_constraints(MoEModel& model) {
  for (auto& e : model.experts) {
    for (double& th : e.theta) th = std::max(th, 0.0);
    Matrix& dict = e.dictionary;
    for (std::size_t c = 0; c < dict.cols(); ++c) {
      double sq = 0.0;
      for (std::size_t r = 0; r < dict.rows(); ++r) sq += dict(r, c) * dict(r, c);
      const double n = std::sqrt(sq);
      if (n == 0.0 || std::abs(n - 1.0) <= 1e-12) continue;
      for (std::size_t r = 0; r < dict.rows(); ++r) dict(r, c) /= n;
    }
  }
}

void adam_step(MoEModel& model, const Gradients& grads, AdamState& state, double learning_rate,
               const AdamConfig& adam) {
  auto params = model.parameters();
  auto g = grads.blocks();
  auto m = state.m.blocks();
  auto v = state.v.blocks();
  if (g.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw DimensionError("adam_step: gradient layout does not match the model");
  ++state.step;
  for (std::size_t b = 0; b < params.size(); ++b)
    adam_update(params[b], g[b], m[b], v[b], state.step, learning_rate, adam);
  project_constraints(model);
}

namespace {

double entropy_of(std::span<const double> w) {
  double h = 0.0;
  for (double x : w)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

}  // namespace

BatchGradients batch_gradients(const MoEModel& model, const Matrix& rows, std::span<const std::size_t> batch,
                               const TrainConfig& config) {
  if (batch.empty()) throw ValueError("batch_gradients: empty batch");
  if (rows.cols() != model.dims.embed_dim) throw DimensionError("batch_gradients: row width does not match model");
  const double weight = 1.0 / static_cast<double>(batch.size());
  BatchGradients out{Gradients::zeros_like(model), 0.0, 0.0, 0.0};

  std::vector<ForwardTrace> traces;
  traces.reserve(batch.size());
  Vector mean_probs(model.dims.strata, 0.0);
  Vector mean_weights(model.dims.experts, 0.0);
  double sharpen = 0.0;
  for (std::size_t idx : batch) {
    auto z = rows.row(idx);
    traces.push_back(moe_forward(model, z));
    const auto& g = traces.back().gate;
    out.mean_loss += weight * loss(z, traces.back().output);
    out.mean_entropy += weight * entropy_of(g.weights);
    sharpen += weight * entropy_of(g.stratum_probs);
    axpy(weight, g.stratum_probs, mean_probs);
    axpy(weight, g.weights, mean_weights);
  }
  out.objective = out.mean_loss + config.entropy_coef * out.mean_entropy + config.stratum_sharpen_coef * sharpen -
                  config.stratum_balance_coef * entropy_of(mean_probs) -
                  config.expert_balance_coef * entropy_of(mean_weights);

  // Batch-marginal terms differentiate to per-sample vectors on p and w:
  //   d/dp_i [κ·mean H(p_i) − λ·H(p̄)] = (1/B)[λ(ln p̄ + 1) − κ(ln p_i + 1)]
  // and likewise for −λ·H(w̄). The 1/B is applied by the accumulation weight.
  const bool stratum_terms = config.stratum_sharpen_coef != 0.0 || config.stratum_balance_coef != 0.0;
  Vector extra_probs(stratum_terms ? model.dims.strata : 0);
  Vector extra_weights(config.expert_balance_coef != 0.0 ? model.dims.experts : 0);
  for (std::size_t e = 0; e < extra_weights.size(); ++e)
    extra_weights[e] = config.expert_balance_coef * (std::log(mean_weights[e]) + 1.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& trace = traces[k];
    for (std::size_t s = 0; s < extra_probs.size(); ++s) {
      const double p = std::max(trace.gate.stratum_probs[s], 1e-300);
      extra_probs[s] = config.stratum_balance_coef * (std::log(mean_probs[s]) + 1.0) -
                       config.stratum_sharpen_coef * (std::log(p) + 1.0);
    }
    accumulate_backward(model, trace, rows.row(batch[k]), weight, out.grads, config.entropy_coef, extra_probs,
                        extra_weights);
  }
  return out;
}

TrainHistory train(MoEModel& model, const EmbeddingDataset& dataset, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  validate(config);
  validate(model);
  if (dataset.size() == 0) throw ValueError("train: dataset is empty");
  if (dataset.dim() != model.dims.embed_dim)
    throw DimensionError("train: dataset dim " + std::to_string(dataset.dim()) + " does not match model dim " +
                         std::to_string(model.dims.embed_dim));

  TrainHistory history;
  const std::size_t n = dataset.size();
  AdamState state = AdamState::for_model(model);
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffler(config.seed + epoch);
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    double entropy_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      BatchGradients step = batch_gradients(model, dataset.embeddings, batch, config);
      loss_sum += step.mean_loss * static_cast<double>(batch.size());
      entropy_sum += step.mean_entropy * static_cast<double>(batch.size());
      clip_global_norm(step.grads, config.gradient_clip);
      adam_step(model, step.grads, state, config.learning_rate, config.adam);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(n);
    stats.mean_entropy = entropy_sum / static_cast<double>(n);
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

double evaluate_loss(const MoEModel& model, const EmbeddingDataset& dataset) {
  if (dataset.dim() != model.dims.embed_dim) throw DimensionError("evaluate_loss: dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto z = dataset.embeddings.row(i);
    total += loss(z, moe_forward(model, z).output);
  }
  return total / static_cast<double>(dataset.size());
}

void write_history_csv(const TrainHistory& history, std::ostream& out) {
  out << "epoch,loss,entropy,seconds\n";
  out << std::setprecision(17);
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << e.mean_loss << ',' << e.mean_entropy << ',' << e.seconds << '\n';
}

}  // namespace stratmoe
