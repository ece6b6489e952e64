#include "stratmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"

namespace stratmoe {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'P', 'R', 'B'};

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << name << " has shape " << m.shape_string() << ", expected " << rows << "x" << cols;
    throw DimensionError(os.str());
  }
}

void require_length(std::span<const double> z, std::size_t expected, const char* what) {
  if (z.size() != expected) {
    std::ostringstream os;
    os << what << ": input length " << z.size() << ", expected " << expected;
    throw DimensionError(os.str());
  }
}

void normalize_columns(Matrix& d) {
  for (std::size_t c = 0; c < d.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < d.rows(); ++r) sq += d(r, c) * d(r, c);
    const double n = std::sqrt(sq);
    if (n == 0.0) continue;
    for (std::size_t r = 0; r < d.rows(); ++r) d(r, c) /= n;
  }
}

}  // namespace

std::vector<std::size_t> MoEModel::sparsity_menu() const {
  std::vector<std::size_t> menu;
  menu.reserve(experts.size());
  for (const auto& e : experts) menu.push_back(e.sparsity);
  return menu;
}

std::vector<std::span<double>> MoEModel::parameters() {
  std::vector<std::span<double>> out;
  for (auto& e : experts) {
    out.push_back(e.dictionary.flat());
    out.push_back(e.lista_w.flat());
    out.push_back(e.lista_s.flat());
    out.push_back(e.theta);
  }
  out.push_back(gating.query_proj.flat());
  out.push_back(gating.keys.flat());
  out.push_back(gating.expert_logits.flat());
  return out;
}

std::vector<std::span<const double>> MoEModel::parameters() const {
  auto spans = const_cast<MoEModel*>(this)->parameters();
  return {spans.begin(), spans.end()};
}

void validate(const MoEModel& model) {
  const auto& d = model.dims;
  if (d.embed_dim == 0 || d.atoms == 0 || d.query_dim == 0 || d.strata == 0)
    throw ValueError("model dimensions must be positive");
  if (model.experts.size() != d.experts || d.experts == 0)
    throw DimensionError("model has " + std::to_string(model.experts.size()) + " experts, dims say " +
                         std::to_string(d.experts));
  std::size_t previous = 0;
  for (const auto& e : model.experts) {
    require_shape(e.dictionary, d.embed_dim, d.atoms, "dictionary");
    require_shape(e.lista_w, d.atoms, d.embed_dim, "lista_w");
    require_shape(e.lista_s, d.atoms, d.atoms, "lista_s");
    if (e.theta.size() != d.atoms) throw DimensionError("theta length does not match atom count");
    if (e.sparsity == 0 || e.sparsity > d.atoms || e.sparsity <= previous)
      throw ValueError("sparsity levels must be strictly increasing within [1, atoms]");
    previous = e.sparsity;
  }
  require_shape(model.gating.query_proj, d.query_dim, d.embed_dim, "query_proj");
  require_shape(model.gating.keys, d.strata, d.query_dim, "keys");
  require_shape(model.gating.expert_logits, d.strata, d.experts, "expert_logits");
}

void reset_lista_from_dictionary(DictionaryExpert& expert) {
  const Matrix& dict = expert.dictionary;
  const double nu = spectral_norm_sq(dict);
  const Matrix dt = dict.transposed();
  expert.lista_w = dt;
  for (double& x : expert.lista_w.flat()) x /= nu;
  expert.lista_s = matmul(dt, dict);
  for (double& x : expert.lista_s.flat()) x = -x / nu;
  for (std::size_t i = 0; i < expert.lista_s.rows(); ++i) expert.lista_s(i, i) += 1.0;
}

MoEModel init_model(const ModelDims& dims, const std::vector<std::size_t>& sparsity_menu,
                    std::uint64_t seed) {
  if (sparsity_menu.empty()) throw ValueError("sparsity menu is empty");
  for (std::size_t i = 0; i < sparsity_menu.size(); ++i) {
    if (sparsity_menu[i] == 0 || sparsity_menu[i] > dims.atoms) {
      std::ostringstream os;
      os << "sparsity level " << sparsity_menu[i] << " outside [1, " << dims.atoms << "]";
      throw ValueError(os.str());
    }
    if (i > 0 && sparsity_menu[i] <= sparsity_menu[i - 1])
      throw ValueError("sparsity menu must be strictly increasing");
  }

  MoEModel model;
  model.dims = dims;
  model.dims.experts = sparsity_menu.size();
  const auto& d = model.dims;
  Rng rng(seed);

  const double dict_std = 1.0 / std::sqrt(static_cast<double>(d.embed_dim));
  for (std::size_t s : sparsity_menu) {
    DictionaryExpert e;
    e.dictionary = Matrix(d.embed_dim, d.atoms);
    for (double& x : e.dictionary.flat()) x = dict_std * rng.normal();
    normalize_columns(e.dictionary);
    reset_lista_from_dictionary(e);
    e.theta.assign(d.atoms, 0.01);
    e.sparsity = s;
    model.experts.push_back(std::move(e));
  }

  const double gate_std = 1.0 / std::sqrt(static_cast<double>(d.query_dim));
  model.gating.query_proj = Matrix(d.query_dim, d.embed_dim);
  for (double& x : model.gating.query_proj.flat()) x = gate_std * rng.normal();
  model.gating.keys = Matrix(d.strata, d.query_dim);
  for (double& x : model.gating.keys.flat()) x = gate_std * rng.normal();
  model.gating.expert_logits = Matrix(d.strata, d.experts, 0.0);
  validate(model);
  return model;
}

Vector lista_encode(const DictionaryExpert& expert, std::span<const double> z, std::size_t steps) {
  return lista_encode(expert, z, steps, nullptr);
}

Vector lista_encode(const DictionaryExpert& expert, std::span<const double> z, std::size_t steps,
                    ListaTrace* trace) {
  require_length(z, expert.lista_w.cols(), "lista_encode");
  Vector drive = matvec(expert.lista_w, z);
  Vector code(expert.lista_w.rows(), 0.0);
  if (trace) {
    trace->pre.clear();
    trace->codes.clear();
    trace->codes.push_back(code);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    Vector pre = matvec(expert.lista_s, code);
    axpy(1.0, drive, pre);
    code = soft_threshold(pre, expert.theta);
    if (trace) {
      trace->pre.push_back(std::move(pre));
      trace->codes.push_back(code);
    }
  }
  if (trace) trace->drive = std::move(drive);
  return code;
}

Hardened harden(std::span<const double> code, std::size_t sparsity) {
  Hardened out{Vector(code.begin(), code.end()), top_k_mask(code, sparsity)};
  for (std::size_t i = 0; i < out.code.size(); ++i)
    if (!out.mask[i]) out.code[i] = 0.0;
  return out;
}

GateOutput gate(const GatingNetwork& gating, std::span<const double> z) {
  require_length(z, gating.query_proj.cols(), "gate");
  GateOutput out;
  out.query = matvec(gating.query_proj, z);
  const double scale = 1.0 / std::sqrt(static_cast<double>(out.query.size()));
  out.stratum_logits = matvec(gating.keys, out.query);
  for (double& s : out.stratum_logits) s *= scale;
  out.stratum_probs = softmax(out.stratum_logits);

  const std::size_t strata = gating.expert_logits.rows();
  const std::size_t experts = gating.expert_logits.cols();
  out.mixtures = Matrix(strata, experts);
  out.weights.assign(experts, 0.0);
  for (std::size_t s = 0; s < strata; ++s) {
    const Vector row = softmax(gating.expert_logits.row(s));
    std::copy(row.begin(), row.end(), out.mixtures.row(s).begin());
    axpy(out.stratum_probs[s], row, out.weights);
  }
  return out;
}

ForwardTrace moe_forward(const MoEModel& model, std::span<const double> z) {
  require_length(z, model.dims.embed_dim, "moe_forward");
  ForwardTrace trace;
  trace.gate = gate(model.gating, z);
  trace.output.assign(model.dims.embed_dim, 0.0);
  trace.experts.resize(model.experts.size());
  for (std::size_t e = 0; e < model.experts.size(); ++e) {
    const auto& expert = model.experts[e];
    auto& et = trace.experts[e];
    const Vector code = lista_encode(expert, z, model.dims.lista_steps, &et.lista);
    et.hard = harden(code, expert.sparsity);
    et.reconstruction = matvec(expert.dictionary, et.hard.code);
    axpy(trace.gate.weights[e], et.reconstruction, trace.output);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::vector<std::uint8_t> serialize_model(const MoEModel& model) {
  validate(model);
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.uint<std::uint16_t>(kCheckpointVersion);
  const auto& d = model.dims;
  for (std::size_t v : {d.embed_dim, d.atoms, d.query_dim, d.experts, d.strata, d.lista_steps})
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(v));
  for (const auto& e : model.experts) w.uint<std::uint32_t>(static_cast<std::uint32_t>(e.sparsity));
  for (auto block : model.parameters()) w.f64s(block);
  return w.take();
}

MoEModel deserialize_model(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic))
    throw FormatError(FormatErrorKind::kBadMagic, "not a checkpoint (expected SPRB)");
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError(FormatErrorKind::kBadVersion, "checkpoint version " + std::to_string(version));

  ModelDims d;
  d.embed_dim = r.uint<std::uint32_t>("dims");
  d.atoms = r.uint<std::uint32_t>("dims");
  d.query_dim = r.uint<std::uint32_t>("dims");
  d.experts = r.uint<std::uint32_t>("dims");
  d.strata = r.uint<std::uint32_t>("dims");
  d.lista_steps = r.uint<std::uint32_t>("dims");
  if (d.embed_dim == 0 || d.atoms == 0 || d.query_dim == 0 || d.experts == 0 || d.strata == 0)
    throw FormatError(FormatErrorKind::kDimensionMismatch, "checkpoint has a zero dimension");

  // Bound the declared size against the bytes present before allocating.
  const std::uint64_t per_expert = 2 * d.embed_dim * d.atoms + d.atoms * d.atoms + d.atoms;
  const std::uint64_t gating = d.query_dim * d.embed_dim + d.strata * d.query_dim + d.strata * d.experts;
  const std::uint64_t expected = 4 * d.experts + 8 * (d.experts * per_expert + gating);
  if (r.remaining() < expected) throw FormatError(FormatErrorKind::kTruncated, "checkpoint body too short");
  if (r.remaining() > expected) throw FormatError(FormatErrorKind::kTrailingBytes, "checkpoint has trailing bytes");

  MoEModel model;
  model.dims = d;
  for (std::size_t e = 0; e < d.experts; ++e) {
    DictionaryExpert ex;
    ex.sparsity = r.uint<std::uint32_t>("sparsity menu");
    ex.dictionary = Matrix(d.embed_dim, d.atoms);
    ex.lista_w = Matrix(d.atoms, d.embed_dim);
    ex.lista_s = Matrix(d.atoms, d.atoms);
    ex.theta.assign(d.atoms, 0.0);
    model.experts.push_back(std::move(ex));
  }
  model.gating.query_proj = Matrix(d.query_dim, d.embed_dim);
  model.gating.keys = Matrix(d.strata, d.query_dim);
  model.gating.expert_logits = Matrix(d.strata, d.experts);
  for (auto block : model.parameters()) {
    for (double& x : block) {
      x = r.f64("parameters");
      if (!std::isfinite(x)) throw FormatError(FormatErrorKind::kNonFinite, "non-finite checkpoint parameter");
    }
  }
  try {
    validate(model);
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::kDimensionMismatch, e.what());
  }
  return model;
}

void save_checkpoint(const MoEModel& model, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_model(model));
}

MoEModel load_checkpoint(const std::filesystem::path& path) {
  return deserialize_model(detail::read_file(path.string()));
}

}  // namespace stratmoe
