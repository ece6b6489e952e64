#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stratmoe/analysis.hpp"

namespace stratmoe {

/// Report document with a fixed key order (see docs/report.schema.json).
nlohmann::ordered_json report_to_json(const StratumReport& report, const std::string& run_name);

/// Structural problems of a parsed report document; empty when it conforms.
std::vector<std::string> report_schema_problems(const nlohmann::json& doc);

/// Per-stratum samples, intrinsic dim, degenerate flag and mean entropy.
std::string intrinsic_dims_csv(const StratumReport& report);
/// One row per stratum, one weighted-sparsity column named after the run.
std::string weighted_sparsity_csv(const StratumReport& report, const std::string& run_name);
std::string expert_usage_csv(const StratumReport& report);
/// Mean expert weights per stratum (strata × experts).
std::string mixture_csv(const StratumReport& report);
std::string domain_strata_csv(const StratumReport& report);
std::string distance_csv(const Matrix& distances);
/// x,y,z,domain,stratum per sample.
std::string projection_csv(const StratumReport& report);

/// First two projection axes; color by stratum, marker shape by domain.
std::string scatter_svg(const StratumReport& report, const std::string& title);
/// Mean expert weights per stratum as a strata × experts grid.
std::string mixture_heatmap_svg(const StratumReport& report, const std::string& title);

/// Writes report.json and the CSV tables into `dir` (created if needed),
/// plus scatter.svg and mixture_heatmap.svg when `plots` is set. Returns the
/// written paths in order.
std::vector<std::filesystem::path> write_report(const StratumReport& report, const std::string& run_name,
                                                const std::filesystem::path& dir, bool plots);

}  // namespace stratmoe
