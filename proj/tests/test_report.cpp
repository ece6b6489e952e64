#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "stratmoe/report_io.hpp"
#include "stratmoe/training.hpp"

using namespace stratmoe;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Enough of JSON Schema 2020-12 for docs/report.schema.json: type (single or
// list), const, required, properties, additionalProperties: false, items,
// minItems, minimum, maximum, exclusiveMinimum.
bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer")
    return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  ADD_FAILURE() << "unsupported schema type " << t;
  return false;
}

void check_schema(const json& schema, const json& v, const std::string& at, std::vector<std::string>& errors) {
  static const std::set<std::string> supported{"$schema", "title", "description", "type", "const", "required",
                                               "properties", "additionalProperties", "items", "minItems",
                                               "minimum", "maximum", "exclusiveMinimum"};
  for (const auto& item : schema.items())
    if (!supported.count(item.key())) ADD_FAILURE() << "unsupported schema keyword " << item.key() << " at " << at;

  if (auto t = schema.find("type"); t != schema.end()) {
    bool ok = false;
    if (t->is_string()) ok = has_type(v, *t);
    else
      for (const auto& alt : *t) ok = ok || has_type(v, alt);
    if (!ok) {
      errors.push_back(at + ": wrong type");
      return;
    }
  }
  if (auto c = schema.find("const"); c != schema.end() && *c != v) errors.push_back(at + ": const mismatch");
  if (v.is_number()) {
    const double x = v.get<double>();
    if (auto m = schema.find("minimum"); m != schema.end() && x < m->get<double>())
      errors.push_back(at + ": < minimum");
    if (auto m = schema.find("maximum"); m != schema.end() && x > m->get<double>())
      errors.push_back(at + ": > maximum");
    if (auto m = schema.find("exclusiveMinimum"); m != schema.end() && x <= m->get<double>())
      errors.push_back(at + ": <= exclusiveMinimum");
  }
  if (v.is_object()) {
    if (auto r = schema.find("required"); r != schema.end())
      for (const auto& key : *r)
        if (!v.contains(key.get<std::string>())) errors.push_back(at + ": missing " + key.get<std::string>());
    const auto props = schema.value("properties", json::object());
    for (const auto& item : v.items()) {
      if (props.contains(item.key())) check_schema(props[item.key()], item.value(), at + "." + item.key(), errors);
      else if (schema.value("additionalProperties", true) == false)
        errors.push_back(at + ": unexpected " + item.key());
    }
  }
  if (v.is_array()) {
    if (auto m = schema.find("minItems"); m != schema.end() && v.size() < m->get<std::size_t>())
      errors.push_back(at + ": too few items");
    if (auto items = schema.find("items"); items != schema.end())
      for (std::size_t i = 0; i < v.size(); ++i)
        check_schema(*items, v[i], at + "[" + std::to_string(i) + "]", errors);
  }
}

std::vector<std::string> validate_against_doc_schema(const json& doc) {
  std::ifstream in(fs::path(STRATMOE_SOURCE_DIR) / "docs" / "report.schema.json");
  EXPECT_TRUE(in.good());
  const json schema = json::parse(in);
  std::vector<std::string> errors;
  check_schema(schema, doc, "$", errors);
  return errors;
}

StratumReport sample_report(std::uint64_t seed, std::size_t strata = 3) {
  auto r = synth_generate(SynthSpec{12, {StratumSpec{2, 25}, StratumSpec{4, 25}}, 0.01, seed});
  r.dataset.domain_names[1] = "code, \"quoted\" <&>";
  auto model = init_model(ModelDims{12, 6, 4, 3, strata, 2}, {2, 4, 6}, seed);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 10;
  cfg.seed = seed;
  train(model, r.dataset, cfg);
  return build_report(model, r.dataset);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(ReportJson, ConformsToDocumentedSchemaAndBuiltInChecker) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto rep = sample_report(seed, 2 + seed % 3);
    const json doc = json::parse(report_to_json(rep, "run").dump());
    EXPECT_TRUE(report_schema_problems(doc).empty());
    const auto errors = validate_against_doc_schema(doc);
    EXPECT_TRUE(errors.empty()) << errors.front();
  }
}

TEST(ReportJson, KeyOrderIsStable) {
  const auto doc = report_to_json(sample_report(1), "x");
  std::vector<std::string> keys;
  for (const auto& item : doc.items()) keys.push_back(item.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"format", "version", "run_name", "entropy_unit", "variance_fraction",
                                            "sample_count", "mean_loss", "sparsity_menu", "domains", "strata",
                                            "domain_by_stratum", "expert_usage", "inter_expert_distance"}));
  EXPECT_EQ(doc["entropy_unit"], "nats");
}

TEST(ReportJson, CheckersRejectBrokenDocuments) {
  const json good = json::parse(report_to_json(sample_report(2), "run").dump());
  auto both_reject = [&](const json& bad, const char* what) {
    EXPECT_FALSE(report_schema_problems(bad).empty()) << what;
    EXPECT_FALSE(validate_against_doc_schema(bad).empty()) << what;
  };
  auto extra = good;
  extra["surprise"] = 1;
  both_reject(extra, "extra key");
  auto missing = good;
  missing.erase("strata");
  both_reject(missing, "missing key");
  auto wrong_unit = good;
  wrong_unit["entropy_unit"] = "bits";
  both_reject(wrong_unit, "unit");
  auto negative = good;
  negative["strata"][0]["mean_gating_entropy"] = -1.0;
  both_reject(negative, "negative entropy");

  auto miscount = good;
  miscount["sample_count"] = good["sample_count"].get<std::size_t>() + 1;
  EXPECT_FALSE(report_schema_problems(miscount).empty());
  auto out_of_menu = good;
  for (auto& st : out_of_menu["strata"])
    if (!st["weighted_sparsity"].is_null()) st["weighted_sparsity"] = 100.0;
  EXPECT_FALSE(report_schema_problems(out_of_menu).empty());
}

TEST(ReportCsv, WeightedSparsityTableHasOneRowPerStratumAndOneRunColumn) {
  for (std::size_t strata : {1u, 3u, 5u}) {
    const auto rep = sample_report(3, strata);
    const auto rows = lines(weighted_sparsity_csv(rep, "synthetic"));
    ASSERT_EQ(rows.size(), strata + 1);
    EXPECT_EQ(rows[0], "stratum,synthetic");
    for (std::size_t s = 0; s < strata; ++s) {
      const auto& line = rows[s + 1];
      EXPECT_EQ(std::count(line.begin(), line.end(), ','), 1);
      EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(s));
      const auto& ws = rep.strata[s].weighted_sparsity;
      const std::string cell = line.substr(line.find(',') + 1);
      if (ws) EXPECT_EQ(std::stod(cell), *ws);
      else
        EXPECT_TRUE(cell.empty());
    }
  }
  EXPECT_EQ(lines(weighted_sparsity_csv(sample_report(3), "a,b"))[0], "stratum,\"a,b\"");
}

TEST(ReportCsv, TablesHaveExpectedShapes) {
  const auto rep = sample_report(4);
  EXPECT_EQ(lines(intrinsic_dims_csv(rep)).size(), 4u);
  EXPECT_EQ(lines(expert_usage_csv(rep)), (std::vector<std::string>{
                                               "expert,sparsity,argmax_count",
                                               "0,2," + std::to_string(rep.usage.histogram[0]),
                                               "1,4," + std::to_string(rep.usage.histogram[1]),
                                               "2,6," + std::to_string(rep.usage.histogram[2])}));
  const auto mix = lines(mixture_csv(rep));
  ASSERT_EQ(mix.size(), 4u);
  EXPECT_EQ(mix[0], "stratum,expert_0,expert_1,expert_2");
  const auto dom = lines(domain_strata_csv(rep));
  ASSERT_EQ(dom.size(), 3u);
  EXPECT_EQ(dom[2].rfind("\"code, \"\"quoted\"\" <&>\",", 0), 0u) << dom[2];
  EXPECT_EQ(lines(distance_csv(rep.distances.matched_frobenius)).size(), 4u);
  const auto proj = lines(projection_csv(rep));
  ASSERT_EQ(proj.size(), 51u);
  EXPECT_EQ(proj[0], "x,y,z,domain,stratum");
  // Shortest round-trip formatting preserves every bit.
  EXPECT_EQ(std::stod(proj[1].substr(0, proj[1].find(','))), rep.projection(0, 0));
}

TEST(ReportSvg, PlotsAreDeterministicAndEscaped) {
  const auto a = sample_report(5), b = sample_report(5);
  const auto sa = scatter_svg(a, "t <1>"), sb = scatter_svg(b, "t <1>");
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(mixture_heatmap_svg(a, "h"), mixture_heatmap_svg(b, "h"));
  EXPECT_EQ(sa.rfind("<svg", 0), 0u);
  EXPECT_NE(sa.find("t &lt;1&gt;"), std::string::npos);
  EXPECT_NE(sa.find("code, &quot;quoted&quot; &lt;&amp;&gt;"), std::string::npos);
  EXPECT_EQ(sa.find("<&>"), std::string::npos);
  const auto heat = mixture_heatmap_svg(a, "h");
  EXPECT_NE(heat.find("s=6"), std::string::npos);
  EXPECT_NE(heat.find("stratum 2"), std::string::npos);
}

TEST(WriteReport, WritesEveryFileAndRoundTripsJson) {
  const auto rep = sample_report(6);
  const fs::path dir = fs::temp_directory_path() / "stratmoe_test_report";
  fs::remove_all(dir);
  const auto plain = write_report(rep, "r", dir, false);
  EXPECT_EQ(plain.size(), 9u);
  EXPECT_FALSE(fs::exists(dir / "scatter.svg"));
  const auto with_plots = write_report(rep, "r", dir, true);
  EXPECT_EQ(with_plots.size(), 11u);
  for (const auto& p : with_plots) EXPECT_TRUE(fs::is_regular_file(p)) << p;
  const json doc = json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(report_schema_problems(doc).empty());
  EXPECT_EQ(doc["sample_count"], 50);
  EXPECT_EQ(slurp(dir / "projection.csv"), projection_csv(rep));

  const fs::path blocked = dir / "report.json" / "sub";
  EXPECT_THROW(write_report(rep, "r", blocked, false), FormatError);
}
