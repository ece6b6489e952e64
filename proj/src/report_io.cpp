#include "stratmoe/report_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace stratmoe {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

// Shortest representation that round-trips.
std::string num(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

ordered_json optional_json(const std::optional<double>& x) {
  return x ? ordered_json(*x) : ordered_json(nullptr);
}

// tab10
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
constexpr std::size_t kGlyphs = 6;

const char* color_for(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string glyph(std::size_t kind, double x, double y, double r, const std::string& style) {
  std::ostringstream os;
  const std::string cx = fixed(x), cy = fixed(y);
  switch (kind % kGlyphs) {
    case 0:
      os << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << fixed(r) << "\" " << style << "/>";
      break;
    case 1:
      os << "<rect x=\"" << fixed(x - r) << "\" y=\"" << fixed(y - r) << "\" width=\"" << fixed(2 * r)
         << "\" height=\"" << fixed(2 * r) << "\" " << style << "/>";
      break;
    case 2:
      os << "<polygon points=\"" << cx << "," << fixed(y - r) << " " << fixed(x + r) << "," << fixed(y + r) << " "
         << fixed(x - r) << "," << fixed(y + r) << "\" " << style << "/>";
      break;
    case 3:
      os << "<polygon points=\"" << cx << "," << fixed(y - r) << " " << fixed(x + r) << "," << cy << " " << cx << ","
         << fixed(y + r) << " " << fixed(x - r) << "," << cy << "\" " << style << "/>";
      break;
    case 4:
      os << "<polygon points=\"" << fixed(x - r) << "," << fixed(y - r) << " " << fixed(x + r) << ","
         << fixed(y - r) << " " << cx << "," << fixed(y + r) << "\" " << style << "/>";
      break;
    default:
      os << "<path d=\"M" << fixed(x - r) << " " << cy << "H" << fixed(x + r) << "M" << cx << " " << fixed(y - r)
         << "V" << fixed(y + r) << "\" " << style << " stroke-width=\"1.5\"/>";
  }
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  out.close();
  if (!out) throw FormatError(FormatErrorKind::kIo, "failed writing '" + path.string() + "'");
}

}  // namespace

ordered_json report_to_json(const StratumReport& report, const std::string& run_name) {
  ordered_json doc;
  doc["format"] = "stratmoe.report";
  doc["version"] = kFormatVersion;
  doc["run_name"] = run_name;
  doc["entropy_unit"] = "nats";
  doc["variance_fraction"] = report.variance_fraction;
  doc["sample_count"] = report.stratum_ids.size();
  doc["mean_loss"] = report.mean_loss;
  doc["sparsity_menu"] = report.sparsity_menu;
  doc["domains"] = report.domain_names;

  ordered_json strata = ordered_json::array();
  for (std::size_t s = 0; s < report.strata.size(); ++s) {
    const auto& st = report.strata[s];
    ordered_json row;
    row["stratum"] = s;
    row["sample_count"] = st.samples;
    row["intrinsic_dim"] = st.intrinsic_dim;
    row["degenerate"] = st.degenerate;
    row["weighted_sparsity"] = optional_json(st.weighted_sparsity);
    row["mean_gating_entropy"] = optional_json(st.mean_gating_entropy);
    strata.push_back(std::move(row));
  }
  doc["strata"] = std::move(strata);
  doc["domain_by_stratum"] = report.domain_by_stratum;

  ordered_json usage;
  usage["argmax_histogram"] = report.usage.histogram;
  usage["mean_mixture"] = matrix_json(report.usage.mean_mixture);
  doc["expert_usage"] = std::move(usage);

  ordered_json distances;
  distances["matched_frobenius"] = matrix_json(report.distances.matched_frobenius);
  distances["mean_principal_angle"] = matrix_json(report.distances.mean_principal_angle);
  doc["inter_expert_distance"] = std::move(distances);
  return doc;
}

std::vector<std::string> report_schema_problems(const json& doc) {
  std::vector<std::string> problems;
  auto fail = [&](const std::string& msg) { problems.push_back(msg); };

  if (!doc.is_object()) return {"document is not an object"};
  const char* keys[] = {"format",  "version", "run_name",          "entropy_unit", "variance_fraction",
                        "sample_count", "mean_loss", "sparsity_menu", "domains", "strata",
                        "domain_by_stratum", "expert_usage", "inter_expert_distance"};
  for (const char* k : keys)
    if (!doc.contains(k)) fail(std::string("missing key '") + k + "'");
  for (const auto& item : doc.items())
    if (std::find_if(std::begin(keys), std::end(keys), [&](const char* k) { return item.key() == k; }) ==
        std::end(keys))
      fail("unexpected key '" + item.key() + "'");
  if (!problems.empty()) return problems;

  if (doc["format"] != "stratmoe.report") fail("format must be \"stratmoe.report\"");
  if (doc["version"] != kFormatVersion) fail("unsupported version");
  if (!doc["run_name"].is_string()) fail("run_name must be a string");
  if (doc["entropy_unit"] != "nats") fail("entropy_unit must be \"nats\"");
  if (!doc["variance_fraction"].is_number()) fail("variance_fraction must be a number");
  if (!doc["mean_loss"].is_number()) fail("mean_loss must be a number");
  if (!doc["sample_count"].is_number_unsigned()) fail("sample_count must be a nonnegative integer");
  if (!problems.empty()) return problems;

  const auto& menu = doc["sparsity_menu"];
  if (!menu.is_array() || menu.empty()) return {"sparsity_menu must be a nonempty array"};
  for (const auto& m : menu)
    if (!m.is_number_unsigned()) return {"sparsity_menu entries must be nonnegative integers"};
  const std::size_t experts = menu.size();
  const double lo = menu.front().get<double>(), hi = menu.back().get<double>();

  const auto& domains = doc["domains"];
  if (!domains.is_array()) return {"domains must be an array"};
  for (const auto& d : domains)
    if (!d.is_string()) fail("domains entries must be strings");

  const auto& strata = doc["strata"];
  if (!strata.is_array() || strata.empty()) return {"strata must be a nonempty array"};
  const std::size_t n = doc["sample_count"].get<std::size_t>();
  std::size_t total = 0;
  const double max_entropy = std::log(static_cast<double>(experts)) + 1e-9;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    const auto& st = strata[s];
    const std::string where = "strata[" + std::to_string(s) + "]";
    if (!st.is_object()) {
      fail(where + " must be an object");
      continue;
    }
    if (st.size() != 6) fail(where + " must have exactly 6 keys");
    if (st.value("stratum", json()) != s) fail(where + ".stratum must equal its index");
    const json count = st.value("sample_count", json());
    if (!count.is_number_unsigned()) {
      fail(where + ".sample_count must be a nonnegative integer");
      continue;
    }
    total += count.get<std::size_t>();
    if (!st.value("intrinsic_dim", json()).is_number_unsigned()) fail(where + ".intrinsic_dim must be an integer");
    if (!st.value("degenerate", json()).is_boolean()) fail(where + ".degenerate must be a boolean");
    const json ws = st.value("weighted_sparsity", json(1));
    const json h = st.value("mean_gating_entropy", json(1));
    const bool empty = count.get<std::size_t>() == 0;
    if (empty != ws.is_null()) fail(where + ".weighted_sparsity must be null exactly when the stratum is empty");
    if (empty != h.is_null()) fail(where + ".mean_gating_entropy must be null exactly when the stratum is empty");
    if (ws.is_number() && (ws.get<double>() < lo - 1e-9 || ws.get<double>() > hi + 1e-9))
      fail(where + ".weighted_sparsity outside the menu range");
    if (h.is_number() && (h.get<double>() < 0.0 || h.get<double>() > max_entropy))
      fail(where + ".mean_gating_entropy outside [0, ln E]");
  }
  if (total != n) fail("stratum sample counts do not sum to sample_count");

  auto check_matrix = [&](const json& m, std::size_t rows, std::size_t cols, const std::string& name) {
    if (!m.is_array() || m.size() != rows) {
      fail(name + " must have " + std::to_string(rows) + " rows");
      return;
    }
    for (const auto& r : m) {
      if (!r.is_array() || r.size() != cols) {
        fail(name + " rows must have " + std::to_string(cols) + " entries");
        return;
      }
      for (const auto& x : r)
        if (!x.is_number()) {
          fail(name + " entries must be numbers");
          return;
        }
    }
  };
  check_matrix(doc["domain_by_stratum"], domains.size(), strata.size(), "domain_by_stratum");

  const auto& usage = doc["expert_usage"];
  if (!usage.is_object() || usage.size() != 2 || !usage.contains("argmax_histogram") ||
      !usage.contains("mean_mixture")) {
    fail("expert_usage must hold argmax_histogram and mean_mixture");
  } else {
    const auto& hist = usage["argmax_histogram"];
    if (!hist.is_array() || hist.size() != experts) fail("argmax_histogram must have one entry per expert");
    check_matrix(usage["mean_mixture"], strata.size(), experts, "mean_mixture");
  }

  const auto& dist = doc["inter_expert_distance"];
  if (!dist.is_object() || dist.size() != 2 || !dist.contains("matched_frobenius") ||
      !dist.contains("mean_principal_angle")) {
    fail("inter_expert_distance must hold matched_frobenius and mean_principal_angle");
  } else {
    check_matrix(dist["matched_frobenius"], experts, experts, "matched_frobenius");
    check_matrix(dist["mean_principal_angle"], experts, experts, "mean_principal_angle");
  }
  return problems;
}

std::string intrinsic_dims_csv(const StratumReport& report) {
  std::string out = "stratum,samples,intrinsic_dim,degenerate,mean_gating_entropy\n";
  for (std::size_t s = 0; s < report.strata.size(); ++s) {
    const auto& st = report.strata[s];
    out += std::to_string(s) + "," + std::to_string(st.samples) + "," + std::to_string(st.intrinsic_dim) + "," +
           (st.degenerate ? "1" : "0") + "," + (st.mean_gating_entropy ? num(*st.mean_gating_entropy) : "") + "\n";
  }
  return out;
}

std::string weighted_sparsity_csv(const StratumReport& report, const std::string& run_name) {
  std::string out = "stratum," + csv_field(run_name) + "\n";
  for (std::size_t s = 0; s < report.strata.size(); ++s) {
    const auto& ws = report.strata[s].weighted_sparsity;
    out += std::to_string(s) + "," + (ws ? num(*ws) : "") + "\n";
  }
  return out;
}

std::string expert_usage_csv(const StratumReport& report) {
  std::string out = "expert,sparsity,argmax_count\n";
  for (std::size_t e = 0; e < report.usage.histogram.size(); ++e)
    out += std::to_string(e) + "," + std::to_string(report.sparsity_menu.at(e)) + "," +
           std::to_string(report.usage.histogram[e]) + "\n";
  return out;
}

std::string mixture_csv(const StratumReport& report) {
  const Matrix& m = report.usage.mean_mixture;
  std::string out = "stratum";
  for (std::size_t e = 0; e < m.cols(); ++e) out += ",expert_" + std::to_string(e);
  out += "\n";
  for (std::size_t s = 0; s < m.rows(); ++s) {
    out += std::to_string(s);
    for (double x : m.row(s)) out += "," + num(x);
    out += "\n";
  }
  return out;
}

std::string domain_strata_csv(const StratumReport& report) {
  std::string out = "domain";
  for (std::size_t s = 0; s < report.strata.size(); ++s) out += ",stratum_" + std::to_string(s);
  out += "\n";
  for (std::size_t d = 0; d < report.domain_by_stratum.size(); ++d) {
    out += csv_field(report.domain_names.at(d));
    for (std::size_t c : report.domain_by_stratum[d]) out += "," + std::to_string(c);
    out += "\n";
  }
  return out;
}

std::string distance_csv(const Matrix& distances) {
  std::string out = "expert";
  for (std::size_t e = 0; e < distances.cols(); ++e) out += ",expert_" + std::to_string(e);
  out += "\n";
  for (std::size_t r = 0; r < distances.rows(); ++r) {
    out += std::to_string(r);
    for (double x : distances.row(r)) out += "," + num(x);
    out += "\n";
  }
  return out;
}

std::string projection_csv(const StratumReport& report) {
  std::string out = "x,y,z,domain,stratum\n";
  for (std::size_t i = 0; i < report.projection.rows(); ++i) {
    auto p = report.projection.row(i);
    out += num(p[0]) + "," + num(p[1]) + "," + num(p[2]) + "," +
           csv_field(report.domain_names.at(report.domain_ids.at(i))) + "," +
           std::to_string(report.stratum_ids.at(i)) + "\n";
  }
  return out;
}

std::string scatter_svg(const StratumReport& report, const std::string& title) {
  constexpr double kPlot = 480, kMargin = 40, kLegendX = kPlot + 2 * kMargin, kWidth = kLegendX + 200;
  constexpr double kHeight = kPlot + 2 * kMargin;
  const Matrix& p = report.projection;

  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  if (p.rows() > 0) {
    xmin = xmax = p(0, 0);
    ymin = ymax = p(0, 1);
    for (std::size_t i = 1; i < p.rows(); ++i) {
      xmin = std::min(xmin, p(i, 0));
      xmax = std::max(xmax, p(i, 0));
      ymin = std::min(ymin, p(i, 1));
      ymax = std::max(ymax, p(i, 1));
    }
  }
  const double xspan = xmax > xmin ? xmax - xmin : 1.0;
  const double yspan = ymax > ymin ? ymax - ymin : 1.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kMargin << "\" y=\"24\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kPlot << "\" height=\"" << kPlot
     << "\" fill=\"none\" stroke=\"#999\"/>\n";
  os << "<text x=\"" << kMargin + kPlot / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">PC1</text>\n";
  os << "<text x=\"14\" y=\"" << kMargin + kPlot / 2 << "\" transform=\"rotate(-90 14 " << kMargin + kPlot / 2
     << ")\" text-anchor=\"middle\">PC2</text>\n";

  os << "<g>\n";
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double x = kMargin + 8 + (p(i, 0) - xmin) / xspan * (kPlot - 16);
    const double y = kMargin + kPlot - 8 - (p(i, 1) - ymin) / yspan * (kPlot - 16);
    const std::string color = color_for(report.stratum_ids.at(i));
    const std::string style = "fill=\"" + color + "\" stroke=\"" + color + "\" fill-opacity=\"0.6\"";
    os << glyph(report.domain_ids.at(i), x, y, 3.0, style) << "\n";
  }
  os << "</g>\n";

  double ly = kMargin + 10;
  os << "<text x=\"" << kLegendX << "\" y=\"" << ly << "\" font-weight=\"bold\">stratum</text>\n";
  for (std::size_t s = 0; s < report.strata.size(); ++s) {
    ly += 18;
    os << "<rect x=\"" << kLegendX << "\" y=\"" << ly - 10 << "\" width=\"12\" height=\"12\" fill=\""
       << color_for(s) << "\"/>";
    os << "<text x=\"" << kLegendX + 18 << "\" y=\"" << ly << "\">" << s << "</text>\n";
  }
  ly += 30;
  os << "<text x=\"" << kLegendX << "\" y=\"" << ly << "\" font-weight=\"bold\">domain</text>\n";
  for (std::size_t d = 0; d < report.domain_names.size(); ++d) {
    ly += 18;
    os << glyph(d, kLegendX + 6, ly - 4, 5.0, "fill=\"#555\" stroke=\"#555\"");
    os << "<text x=\"" << kLegendX + 18 << "\" y=\"" << ly << "\">" << xml_escape(report.domain_names[d])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string mixture_heatmap_svg(const StratumReport& report, const std::string& title) {
  constexpr double kCellW = 64, kCellH = 40, kLeft = 90, kTop = 64;
  const Matrix& m = report.usage.mean_mixture;
  const double width = kLeft + kCellW * static_cast<double>(m.cols()) + 20;
  const double height = kTop + kCellH * static_cast<double>(m.rows()) + 40;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"10\" y=\"22\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (std::size_t e = 0; e < m.cols(); ++e)
    os << "<text x=\"" << kLeft + kCellW * (static_cast<double>(e) + 0.5) << "\" y=\"" << kTop - 8
       << "\" text-anchor=\"middle\">s=" << report.sparsity_menu.at(e) << "</text>\n";
  for (std::size_t s = 0; s < m.rows(); ++s) {
    const double y = kTop + kCellH * static_cast<double>(s);
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + kCellH / 2 + 4 << "\" text-anchor=\"end\">stratum " << s
       << "</text>\n";
    for (std::size_t e = 0; e < m.cols(); ++e) {
      const double v = std::clamp(m(s, e), 0.0, 1.0);
      // White to dark blue.
      const int r = static_cast<int>(std::lround(255 - v * (255 - 8)));
      const int g = static_cast<int>(std::lround(255 - v * (255 - 48)));
      const int b = static_cast<int>(std::lround(255 - v * (255 - 107)));
      char fill[8];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", r, g, b);
      const double x = kLeft + kCellW * static_cast<double>(e);
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellW << "\" height=\"" << kCellH
         << "\" fill=\"" << fill << "\" stroke=\"white\"/>";
      os << "<text x=\"" << x + kCellW / 2 << "\" y=\"" << y + kCellH / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
         << (v > 0.5 ? "white" : "black") << "\">" << fixed(m(s, e)) << "</text>\n";
    }
  }
  os << "<text x=\"" << kLeft << "\" y=\"" << height - 12 << "\">mean expert weight per stratum</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> write_report(const StratumReport& report, const std::string& run_name,
                                                const std::filesystem::path& dir, bool plots) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError(FormatErrorKind::kIo, "cannot create '" + dir.string() + "': " + ec.message());

  std::vector<std::filesystem::path> written;
  auto emit = [&](const char* name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  };
  emit("report.json", report_to_json(report, run_name).dump(2) + "\n");
  emit("intrinsic_dims.csv", intrinsic_dims_csv(report));
  emit("weighted_sparsity.csv", weighted_sparsity_csv(report, run_name));
  emit("expert_usage.csv", expert_usage_csv(report));
  emit("mixture.csv", mixture_csv(report));
  emit("domain_strata.csv", domain_strata_csv(report));
  emit("distance_frobenius.csv", distance_csv(report.distances.matched_frobenius));
  emit("distance_angle.csv", distance_csv(report.distances.mean_principal_angle));
  emit("projection.csv", projection_csv(report));
  if (plots) {
    emit("scatter.svg", scatter_svg(report, run_name + ": PCA projection by stratum"));
    emit("mixture_heatmap.svg", mixture_heatmap_svg(report, run_name + ": expert weights per stratum"));
  }
  return written;
}

}  // namespace stratmoe
