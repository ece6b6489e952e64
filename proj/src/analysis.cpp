#include "stratmoe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "stratmoe/training.hpp"

namespace stratmoe {

std::size_t argmax(std::span<const double> x) {
  if (x.empty()) throw ValueError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

StratumAssignment assign_strata(const MoEModel& model, const EmbeddingDataset& dataset) {
  if (dataset.dim() != model.dims.embed_dim) {
    std::ostringstream os;
    os << "assign_strata: dataset dim " << dataset.dim() << " vs model dim " << model.dims.embed_dim;
    throw DimensionError(os.str());
  }
  const std::size_t n = dataset.size();
  StratumAssignment out;
  out.stratum_ids.resize(n);
  out.stratum_probs = Matrix(n, model.dims.strata);
  out.expert_weights = Matrix(n, model.dims.experts);
  for (std::size_t i = 0; i < n; ++i) {
    const GateOutput g = gate(model.gating, dataset.embeddings.row(i));
    std::copy(g.stratum_probs.begin(), g.stratum_probs.end(), out.stratum_probs.row(i).begin());
    std::copy(g.weights.begin(), g.weights.end(), out.expert_weights.row(i).begin());
    out.stratum_ids[i] = static_cast<std::uint32_t>(argmax(g.stratum_probs));
  }
  return out;
}

std::vector<StratumDim> intrinsic_dims(const EmbeddingDataset& dataset,
                                       std::span<const std::uint32_t> stratum_ids, std::size_t strata,
                                       double fraction) {
  if (stratum_ids.size() != dataset.size()) throw DimensionError("intrinsic_dims: one stratum id per row required");
  std::vector<std::vector<std::size_t>> members(strata);
  for (std::size_t i = 0; i < stratum_ids.size(); ++i) members.at(stratum_ids[i]).push_back(i);

  std::vector<StratumDim> out(strata);
  for (std::size_t s = 0; s < strata; ++s) {
    out[s].samples = members[s].size();
    if (members[s].size() < 2) {
      out[s].degenerate = true;
      continue;
    }
    const auto result = pca(select_rows(dataset.embeddings, members[s]), fraction);
    out[s].intrinsic_dim = result.intrinsic_dim;
    out[s].degenerate = result.intrinsic_dim == 0;
  }
  return out;
}

std::vector<std::optional<double>> weighted_sparsity(const Matrix& expert_weights,
                                                     std::span<const std::uint32_t> stratum_ids,
                                                     std::size_t strata,
                                                     std::span<const std::size_t> sparsity_menu) {
  if (expert_weights.cols() != sparsity_menu.size())
    throw DimensionError("weighted_sparsity: weight width does not match menu length");
  if (stratum_ids.size() != expert_weights.rows())
    throw DimensionError("weighted_sparsity: one stratum id per row required");
  std::vector<double> sums(strata, 0.0);
  std::vector<std::size_t> counts(strata, 0);
  for (std::size_t i = 0; i < stratum_ids.size(); ++i) {
    double level = 0.0;
    auto w = expert_weights.row(i);
    for (std::size_t e = 0; e < w.size(); ++e) level += w[e] * static_cast<double>(sparsity_menu[e]);
    sums.at(stratum_ids[i]) += level;
    ++counts[stratum_ids[i]];
  }
  std::vector<std::optional<double>> out(strata);
  for (std::size_t s = 0; s < strata; ++s)
    if (counts[s] > 0) out[s] = sums[s] / static_cast<double>(counts[s]);
  return out;
}

double gating_entropy(std::span<const double> w) {
  if (w.empty()) throw ValueError("gating_entropy: empty distribution");
  double total = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < -1e-8) throw ValueError("gating_entropy: not a distribution");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-8) throw ValueError("gating_entropy: weights do not sum to one");
  double h = 0.0;
  for (double x : w)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

double matched_dictionary_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("matched_dictionary_distance: shapes " + a.shape_string() + " and " + b.shape_string());
  const std::size_t m = a.cols();
  std::vector<Vector> ca(m), cb(m);
  for (std::size_t j = 0; j < m; ++j) {
    ca[j] = a.col(j);
    cb[j] = b.col(j);
  }

  struct Pair {
    double score;
    double sign;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  pairs.reserve(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    const double ni = norm2(ca[i]);
    for (std::size_t j = 0; j < m; ++j) {
      const double nj = norm2(cb[j]);
      const double c = (ni > 0.0 && nj > 0.0) ? dot(ca[i], cb[j]) / (ni * nj) : 0.0;
      pairs.push_back({std::abs(c), c < 0.0 ? -1.0 : 1.0, i, j});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.score > y.score; });

  std::vector<bool> used_a(m, false), used_b(m, false);
  double sq = 0.0;
  std::size_t matched = 0;
  for (const auto& p : pairs) {
    if (matched == m) break;
    if (used_a[p.i] || used_b[p.j]) continue;
    used_a[p.i] = used_b[p.j] = true;
    ++matched;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double d = ca[p.i][r] - p.sign * cb[p.j][r];
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

ExpertDistances inter_expert_distance(const MoEModel& model) {
  const std::size_t e = model.experts.size();
  ExpertDistances out{Matrix(e, e), Matrix(e, e)};
  for (std::size_t a = 0; a < e; ++a) {
    for (std::size_t b = a + 1; b < e; ++b) {
      const auto& da = model.experts[a].dictionary;
      const auto& db = model.experts[b].dictionary;
      const double frob = matched_dictionary_distance(da, db);
      const Vector angles = principal_angles(da, db);
      const double mean_angle = std::accumulate(angles.begin(), angles.end(), 0.0) / static_cast<double>(angles.size());
      out.matched_frobenius(a, b) = out.matched_frobenius(b, a) = frob;
      out.mean_principal_angle(a, b) = out.mean_principal_angle(b, a) = mean_angle;
    }
  }
  return out;
}

ExpertUsage expert_usage(const Matrix& expert_weights, std::span<const std::uint32_t> stratum_ids,
                         std::size_t strata) {
  if (expert_weights.rows() == 0) throw ValueError("expert_usage: no samples");
  if (stratum_ids.size() != expert_weights.rows())
    throw DimensionError("expert_usage: one stratum id per row required");
  const std::size_t experts = expert_weights.cols();
  ExpertUsage out{std::vector<std::size_t>(experts, 0), Matrix(strata, experts)};
  std::vector<std::size_t> counts(strata, 0);
  for (std::size_t i = 0; i < expert_weights.rows(); ++i) {
    auto w = expert_weights.row(i);
    ++out.histogram[argmax(w)];
    axpy(1.0, w, out.mean_mixture.row(stratum_ids[i]));
    ++counts.at(stratum_ids[i]);
  }
  for (std::size_t s = 0; s < strata; ++s)
    if (counts[s] > 0)
      for (double& x : out.mean_mixture.row(s)) x /= static_cast<double>(counts[s]);
  return out;
}

Matrix project3d(const EmbeddingDataset& dataset) {
  if (dataset.size() < 4) throw ValueError("project3d: need at least four samples");
  const auto result = pca(dataset.embeddings, 1.0);
  const std::size_t d = dataset.dim();
  const std::size_t k = std::min<std::size_t>(3, d);
  Matrix out(dataset.size(), 3);
  Vector centered(d);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto row = dataset.embeddings.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - result.mean[j];
    for (std::size_t c = 0; c < k; ++c) {
      double v = 0.0;
      for (std::size_t j = 0; j < d; ++j) v += centered[j] * result.components(j, c);
      out(i, c) = v;
    }
  }
  return out;
}

double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.size() != b.size()) throw DimensionError("adjusted_rand_index: labelings differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  const std::size_t ka = *std::max_element(a.begin(), a.end()) + 1;
  const std::size_t kb = *std::max_element(b.begin(), b.end()) + 1;
  std::vector<double> table(ka * kb, 0.0), rows(ka, 0.0), cols(kb, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table[a[i] * kb + b[i]] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (double x : table) index += pairs(x);
  for (double x : rows) sum_rows += pairs(x);
  for (double x : cols) sum_cols += pairs(x);
  const double expected = sum_rows * sum_cols / pairs(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

StratumReport build_report(const MoEModel& model, const EmbeddingDataset& dataset, double variance_fraction) {
  validate(model);
  validate(dataset);
  const std::size_t strata = model.dims.strata;
  const auto menu = model.sparsity_menu();

  StratumReport report;
  report.variance_fraction = variance_fraction;
  report.sparsity_menu = menu;
  report.domain_names = dataset.domain_names;
  report.domain_ids = dataset.domain_ids;

  auto assignment = assign_strata(model, dataset);
  const auto dims = intrinsic_dims(dataset, assignment.stratum_ids, strata, variance_fraction);
  const auto sparsity = weighted_sparsity(assignment.expert_weights, assignment.stratum_ids, strata, menu);

  std::vector<double> entropy_sum(strata, 0.0);
  for (std::size_t i = 0; i < dataset.size(); ++i)
    entropy_sum[assignment.stratum_ids[i]] += gating_entropy(assignment.expert_weights.row(i));

  report.strata.resize(strata);
  for (std::size_t s = 0; s < strata; ++s) {
    auto& st = report.strata[s];
    st.samples = dims[s].samples;
    st.intrinsic_dim = dims[s].intrinsic_dim;
    st.degenerate = dims[s].degenerate;
    st.weighted_sparsity = sparsity[s];
    if (st.samples > 0) st.mean_gating_entropy = entropy_sum[s] / static_cast<double>(st.samples);
  }

  report.domain_by_stratum.assign(dataset.domain_names.size(), std::vector<std::size_t>(strata, 0));
  for (std::size_t i = 0; i < dataset.size(); ++i)
    ++report.domain_by_stratum[dataset.domain_ids[i]][assignment.stratum_ids[i]];

  report.usage = expert_usage(assignment.expert_weights, assignment.stratum_ids, strata);
  report.distances = inter_expert_distance(model);
  report.projection = dataset.size() >= 4 ? project3d(dataset) : Matrix(dataset.size(), 3);
  report.mean_loss = evaluate_loss(model, dataset);
  report.stratum_ids = std::move(assignment.stratum_ids);
  return report;
}

}  // namespace stratmoe
