#include "stratmoe/data.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>

#include "binary_io.hpp"

namespace stratmoe {

namespace {
constexpr char kDatasetMagic[4] = {'S', 'T', 'R', 'D'};
}

void validate(const EmbeddingDataset& ds) {
  if (ds.size() == 0) throw ValueError("dataset is empty");
  if (ds.domain_ids.size() != ds.size())
    throw DimensionError("dataset has " + std::to_string(ds.size()) + " rows but " +
                         std::to_string(ds.domain_ids.size()) + " domain ids");
  for (std::uint32_t id : ds.domain_ids)
    if (id >= ds.domain_names.size())
      throw ValueError("domain id " + std::to_string(id) + " has no name (table size " +
                       std::to_string(ds.domain_names.size()) + ")");
  if (!all_finite(ds.embeddings.flat())) throw ValueError("dataset contains non-finite embeddings");
}

void validate(const SynthSpec& spec) {
  if (spec.ambient_dim == 0) throw ValueError("ambient dimension must be positive");
  if (spec.strata.empty()) throw ValueError("synthetic spec has no strata");
  if (!(spec.noise_sigma >= 0.0)) throw ValueError("noise sigma must be nonnegative");
  for (std::size_t i = 0; i < spec.strata.size(); ++i) {
    const auto& s = spec.strata[i];
    std::ostringstream os;
    os << "stratum " << i << ": ";
    if (s.dim > spec.ambient_dim) {
      os << "dim " << s.dim << " exceeds ambient dim " << spec.ambient_dim;
      throw ValueError(os.str());
    }
    if (s.samples < s.dim + 1) {
      os << "needs at least " << s.dim + 1 << " samples, got " << s.samples;
      throw ValueError(os.str());
    }
    if (!(s.offset_scale >= 0.0) || !(s.coeff_scale >= 0.0)) {
      os << "scales must be nonnegative";
      throw ValueError(os.str());
    }
  }
}

SynthResult synth_generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t L = spec.ambient_dim;
  std::size_t total = 0;
  for (const auto& s : spec.strata) total += s.samples;

  SynthResult out;
  out.dataset.embeddings = Matrix(total, L);
  out.dataset.domain_ids.reserve(total);
  out.ground_truth.reserve(total);

  Rng rng(spec.seed);
  std::size_t row = 0;
  for (std::size_t i = 0; i < spec.strata.size(); ++i) {
    const auto& s = spec.strata[i];
    Matrix raw(L, s.dim);
    for (double& x : raw.flat()) x = rng.normal();
    Matrix basis = orthonormal_basis(raw);

    Vector direction(L);
    for (double& x : direction) x = rng.normal();
    const double dn = norm2(direction);
    Vector center(L);
    for (std::size_t k = 0; k < L; ++k) center[k] = s.offset_scale * direction[k] / dn;

    Vector coeffs(basis.cols());
    for (std::size_t n = 0; n < s.samples; ++n, ++row) {
      for (double& c : coeffs) c = s.coeff_scale * rng.normal();
      auto x = out.dataset.embeddings.row(row);
      std::copy(center.begin(), center.end(), x.begin());
      for (std::size_t r = 0; r < L; ++r) x[r] += dot(basis.row(r), coeffs);
      if (spec.noise_sigma > 0.0)
        for (double& v : x) v += spec.noise_sigma * rng.normal();
      out.dataset.domain_ids.push_back(static_cast<std::uint32_t>(i));
      out.ground_truth.push_back(static_cast<std::uint32_t>(i));
    }
    out.dataset.domain_names.push_back("subspace_" + std::to_string(i));
    out.bases.push_back(std::move(basis));
    out.centers.push_back(std::move(center));
  }

  out.dataset.source_meta = {{"generator", "synthetic"},
                             {"seed", std::to_string(spec.seed)},
                             {"noise_sigma", std::to_string(spec.noise_sigma)}};
  return out;
}

std::vector<std::uint8_t> serialize_dataset(const EmbeddingDataset& ds) {
  validate(ds);
  detail::ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.uint<std::uint16_t>(kDatasetVersion);
  w.uint<std::uint64_t>(ds.size());
  w.uint<std::uint64_t>(ds.dim());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.domain_names.size()));
  for (const auto& name : ds.domain_names) w.string(name);
  for (std::uint32_t id : ds.domain_ids) w.uint<std::uint32_t>(id);
  w.f64s(ds.embeddings.flat());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.source_meta.size()));
  for (const auto& [k, v] : ds.source_meta) {
    w.string(k);
    w.string(v);
  }
  return w.take();
}

EmbeddingDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic))
    throw FormatError(FormatErrorKind::kBadMagic, "not a dataset file (expected STRD)");
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kDatasetVersion)
    throw FormatError(FormatErrorKind::kBadVersion, "dataset version " + std::to_string(version));
  const auto n = r.uint<std::uint64_t>("row count");
  const auto dim = r.uint<std::uint64_t>("dimension");
  if (n == 0 || dim == 0) throw FormatError(FormatErrorKind::kDimensionMismatch, "dataset has zero rows or columns");

  EmbeddingDataset ds;
  const auto names = r.uint<std::uint32_t>("domain table");
  for (std::uint32_t i = 0; i < names; ++i) ds.domain_names.push_back(r.string("domain name"));

  // Guard the allocation below against a corrupt header.
  if (n > r.remaining() / 4 || dim > (r.remaining() - 4 * n) / 8 / n)
    throw FormatError(FormatErrorKind::kTruncated, "file too short for declared shape");

  ds.domain_ids.resize(n);
  for (auto& id : ds.domain_ids) {
    id = r.uint<std::uint32_t>("domain ids");
    if (id >= ds.domain_names.size())
      throw FormatError(FormatErrorKind::kDanglingDomainId, "domain id " + std::to_string(id) + " out of range");
  }
  ds.embeddings = Matrix(n, dim);
  for (double& x : ds.embeddings.flat()) {
    x = r.f64("embeddings");
    if (!std::isfinite(x)) throw FormatError(FormatErrorKind::kNonFinite, "non-finite embedding value");
  }
  const auto meta = r.uint<std::uint32_t>("meta table");
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string key = r.string("meta key");
    std::string value = r.string("meta value");
    ds.source_meta.emplace_back(std::move(key), std::move(value));
  }
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::kTrailingBytes, "unexpected bytes after meta table");
  return ds;
}

void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_dataset(ds));
}

EmbeddingDataset load_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(detail::read_file(path.string()));
}

EmbeddingDataset merge(const std::vector<EmbeddingDataset>& datasets) {
  if (datasets.empty()) throw ValueError("merge: no datasets");
  const std::size_t dim = datasets.front().dim();
  std::size_t total = 0;
  for (const auto& ds : datasets) {
    if (ds.dim() != dim)
      throw DimensionError("merge: embedding dims differ (" + std::to_string(dim) + " vs " +
                           std::to_string(ds.dim()) + ")");
    total += ds.size();
  }

  EmbeddingDataset out;
  out.embeddings = Matrix(total, dim);
  out.domain_ids.reserve(total);
  std::map<std::string, std::uint32_t> name_index;
  std::size_t row = 0;
  for (const auto& ds : datasets) {
    std::vector<std::uint32_t> remap(ds.domain_names.size());
    for (std::size_t i = 0; i < ds.domain_names.size(); ++i) {
      auto [it, inserted] =
          name_index.try_emplace(ds.domain_names[i], static_cast<std::uint32_t>(out.domain_names.size()));
      if (inserted) out.domain_names.push_back(ds.domain_names[i]);
      remap[i] = it->second;
    }
    for (std::size_t i = 0; i < ds.size(); ++i, ++row) {
      auto src = ds.embeddings.row(i);
      std::copy(src.begin(), src.end(), out.embeddings.row(row).begin());
      out.domain_ids.push_back(remap.at(ds.domain_ids[i]));
    }
    for (const auto& kv : ds.source_meta) {
      const bool seen = std::any_of(out.source_meta.begin(), out.source_meta.end(),
                                    [&](const auto& existing) { return existing.first == kv.first; });
      if (!seen) out.source_meta.push_back(kv);
    }
  }
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows())
      throw DimensionError("row " + std::to_string(rows[i]) + " out of range for " + std::to_string(m.rows()) +
                           " rows");
    auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::string ground_truth_csv(std::span<const std::uint32_t> labels) {
  std::string out = "index,stratum\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
  return out;
}

std::vector<std::uint32_t> parse_ground_truth_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "index,stratum")
    throw FormatError(FormatErrorKind::kBadMagic, "ground truth CSV must start with 'index,stratum'");
  std::vector<std::uint32_t> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    std::uint64_t index = 0, label = 0;
    const char* mid = line.data() + (comma == std::string::npos ? line.size() : comma);
    const char* end = line.data() + line.size();
    auto r1 = std::from_chars(line.data(), mid, index);
    auto r2 = comma == std::string::npos ? std::from_chars_result{mid, std::errc::invalid_argument}
                                         : std::from_chars(mid + 1, end, label);
    if (r1.ec != std::errc() || r1.ptr != mid || r2.ec != std::errc() || r2.ptr != end || index != labels.size() ||
        label > UINT32_MAX)
      throw FormatError(FormatErrorKind::kTruncated, "malformed ground truth row " + std::to_string(labels.size()));
    labels.push_back(static_cast<std::uint32_t>(label));
  }
  return labels;
}

}  // namespace stratmoe
